from __future__ import annotations

import numpy as np
import pytest

from oracles import batched_fd_jacobians, random_points
from svto.dynamics import Arm7, Car2D, LinearModel, Quadrotor, linearize, make_model, step


def test_car_zero_velocity_is_fixed_point():
    x = step(Car2D(), np.zeros(3), np.zeros(2))
    np.testing.assert_array_equal(x, np.zeros(3))


def test_car_hand_integration():
    x = step(Car2D(dt=0.02), np.zeros(3), np.array([1.0, 0.0]))
    np.testing.assert_allclose(x, [0.02, 0.0, 0.0], atol=1e-15)


def test_car_position_derivative_wrt_speed_is_dt():
    lin = linearize(Car2D(dt=0.02), np.zeros(3), np.zeros(2))
    assert lin.f_u[0, 0] == pytest.approx(0.02)


def test_quadrotor_hover_is_equilibrium():
    quad = Quadrotor()
    x = np.zeros(12)
    x[:3] = (1.0, 2.0, 3.0)
    u = np.full(4, quad.hover_force)
    xn = step(quad, x, u)
    np.testing.assert_allclose(xn[6:], 0.0, atol=1e-12)
    np.testing.assert_allclose(xn[:3], x[:3], atol=1e-12)


def test_quadrotor_extra_thrust_accelerates_up():
    quad = Quadrotor()
    xn = step(quad, np.zeros(12), np.full(4, quad.hover_force + 0.25))
    assert xn[8] == pytest.approx(quad.dt * 1.0 / quad.mass)


def test_arm_end_effector_follows_kinematics():
    arm = Arm7()
    rng = np.random.default_rng(0)
    x = arm.initial_state(rng.uniform(-1, 1, 7))
    xn = step(arm, x, rng.uniform(-1, 1, 7))
    np.testing.assert_allclose(xn[14:], arm.forward_kinematics(xn[:7]), atol=1e-14)


def test_arm_straight_up_reach():
    arm = Arm7()
    np.testing.assert_allclose(arm.forward_kinematics(np.zeros(7)), [0, 0, sum(arm.links)], atol=1e-14)


@pytest.mark.parametrize("name", ["car", "quadrotor", "arm"])
def test_jacobian_shapes(name):
    model = make_model(name)
    X, U = random_points(name, np.random.default_rng(1), 1)
    lin = linearize(model, X[0], U[0])
    assert lin.f_x.shape == (model.n_x, model.n_x)
    assert lin.f_u.shape == (model.n_x, model.n_u)


@pytest.mark.parametrize("name", ["car", "quadrotor", "arm"])
def test_jacobians_match_finite_differences(name):
    model = make_model(name)
    X, U = random_points(name, np.random.default_rng(2), 200)
    lin = model.jacobians(X, U)
    fx, fu = batched_fd_jacobians(model, X, U)
    assert np.abs(lin.f_x - fx).max() < 1e-4
    assert np.abs(lin.f_u - fu).max() < 1e-4


@pytest.mark.parametrize("name", ["car", "quadrotor", "arm"])
def test_batched_f_matches_pointwise(name):
    model = make_model(name)
    X, U = random_points(name, np.random.default_rng(3), 5)
    batched = model.f(X, U)
    for i in range(5):
        np.testing.assert_allclose(batched[i], model.f(X[i], U[i]), rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("name", ["car", "quadrotor", "arm"])
def test_feedback_rollout_without_offsets_reproduces_rollout(name):
    model = make_model(name)
    rng = np.random.default_rng(4)
    _, U = random_points(name, rng, 10)
    X0, _ = random_points(name, rng, 1)
    x0 = X0[0] if name != "arm" else model.initial_state(X0[0, :7])
    X = model.rollout(x0, U)
    K = rng.standard_normal((1, 10, model.n_u, model.n_x))
    xs, us = model.feedback_rollout(x0, X[None], U[None], np.zeros((1, 1, 10, model.n_u)), K)
    np.testing.assert_allclose(xs[0, 0], X, atol=1e-12)
    np.testing.assert_allclose(us[0, 0], U, atol=1e-12)


def test_car_compiled_rollout_matches_generic_loop():
    car = Car2D()
    rng = np.random.default_rng(5)
    U = rng.standard_normal((2, 20, 2))
    X = car.rollout(np.zeros(3), U)
    offsets = rng.standard_normal((2, 3, 20, 2))
    K = rng.standard_normal((2, 20, 2, 3))
    x0 = np.array([0.1, -0.2, 0.3])
    fast = car.feedback_rollout(x0, X, U, offsets, K)
    slow = super(Car2D, car).feedback_rollout(x0, X, U, offsets, K)
    np.testing.assert_allclose(fast[0], slow[0], atol=1e-12)
    np.testing.assert_allclose(fast[1], slow[1], atol=1e-12)


def test_step_rejects_bad_shapes_and_nonfinite():
    with pytest.raises(ValueError):
        step(Car2D(), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        step(Car2D(), np.array([np.nan, 0, 0]), np.zeros(2))


def test_model_validation():
    with pytest.raises(ValueError):
        Car2D(dt=0.0)
    with pytest.raises(ValueError):
        make_model("boat")
    with pytest.raises(ValueError):
        Car2D(u_lower=np.array([1.0, 1.0]), u_upper=np.array([0.0, 2.0]))


def test_linear_model():
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.0], [0.1]])
    model = LinearModel.unbounded(A, B)
    assert (model.n_x, model.n_u) == (2, 1)
    np.testing.assert_allclose(model.f(np.array([1.0, 2.0]), np.array([3.0])), A @ [1, 2] + B @ [3])
