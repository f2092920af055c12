"""Default weights, start/goal states and desk problems for each system."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from svto.cost import BarrierParams, Obstacle, Problem, QuadraticCost
from svto.dynamics import Arm7, Car2D, DynamicsModel, Quadrotor, make_model


@dataclass(frozen=True)
class SystemDefaults:
    """Per-system task weights and sampling scale.

    ``P``, ``R``, ``Qf`` are diagonal weights; ``sigma0`` is the per-channel
    standard deviation used to scatter the initial ensemble around the
    nominal controls.
    """

    P: tuple[float, ...]
    R: tuple[float, ...]
    Qf: tuple[float, ...]
    sigma0: float
    start: tuple[float, ...]
    target: tuple[float, ...]
    barrier: BarrierParams = BarrierParams()


DEFAULTS: dict[str, SystemDefaults] = {
    "car": SystemDefaults(
        P=(0.5, 0.5, 0.0),
        R=(0.02, 0.02),
        Qf=(200.0, 200.0, 0.0),
        sigma0=0.5,
        start=(0.0, 0.0),
        target=(5.0, 5.0),
        barrier=BarrierParams(mu=0.1, delta=0.001),
    ),
    "quadrotor": SystemDefaults(
        P=(1.0, 1.0, 1.0) + (0.1,) * 3 + (0.05,) * 3 + (0.01,) * 3,
        R=(0.02,) * 4,
        Qf=(200.0, 200.0, 200.0) + (1.0,) * 3 + (5.0,) * 3 + (0.1,) * 3,
        sigma0=0.2,
        start=(0.0, 0.0, 0.0),
        target=(5.0, 0.0, 5.0),
    ),
    "arm": SystemDefaults(
        P=(0.0,) * 7 + (0.01,) * 7 + (2.0,) * 3,
        R=(0.01,) * 7,
        Qf=(0.0,) * 7 + (1.0,) * 7 + (500.0,) * 3,
        sigma0=0.3,
        start=(0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0),
        target=(0.4, 0.3, 0.6),
    ),
}


def start_state(model: DynamicsModel, start) -> np.ndarray:
    """Full state at rest at ``start`` (a position, or joint angles for the arm)."""
    start = np.asarray(start, dtype=float)
    if isinstance(model, Arm7):
        return model.initial_state(start)
    x0 = np.zeros(model.n_x)
    if isinstance(model, Car2D):
        x0[:2] = start[:2]
        x0[2] = start[2] if start.shape[0] > 2 else np.pi / 4
    else:
        x0[list(model.position_indices)] = start
    return x0


def goal_state(model: DynamicsModel, target) -> np.ndarray:
    """State the quadratic cost pulls towards; only position enters for the car."""
    x_goal = np.zeros(model.n_x)
    x_goal[list(model.position_indices)] = np.asarray(target, dtype=float)
    return x_goal


def nominal_controls(model: DynamicsModel, horizon: int) -> np.ndarray:
    """Initial control guess: hover thrust for the quadrotor, zero otherwise."""
    U = np.zeros((horizon, model.n_u))
    if isinstance(model, Quadrotor):
        U[:] = model.hover_force
    return U


def make_cost(model: DynamicsModel, target, P=None, R=None, Qf=None) -> QuadraticCost:
    d = DEFAULTS[model.name]
    return QuadraticCost(
        P=d.P if P is None else P,
        R=d.R if R is None else R,
        Qf=d.Qf if Qf is None else Qf,
        x_goal=goal_state(model, target),
    )


def gap_obstacles() -> tuple[Obstacle, ...]:
    """Two discs leaving a narrow gap on the straight line from (0,0) to (5,5)."""
    return (
        Obstacle(center=(1.6, 3.4), radius=0.9, margin=0.05),
        Obstacle(center=(3.4, 1.6), radius=0.9, margin=0.05),
    )


def clutter_obstacles() -> tuple[Obstacle, ...]:
    """Seven discs scattered around the straight route from (0,0) to (5,5).

    Several distinct homotopy classes have similar costs, so single-start
    DDP lands in a different local optimum depending on its initialization.
    """
    discs = [
        ((1.45, 2.34), 0.33), ((2.48, 3.12), 0.36), ((1.48, 0.85), 0.50), ((3.18, 2.19), 0.43),
        ((3.12, 2.90), 0.49), ((3.64, 4.16), 0.42), ((1.78, 1.34), 0.45),
    ]
    return tuple(Obstacle(center=c, radius=r, margin=0.05) for c, r in discs)


OBSTACLE_SETS = {"gap": gap_obstacles, "clutter": clutter_obstacles, "none": tuple}


def desk_problem(
    system: str = "car",
    horizon: int | None = None,
    obstacles: tuple[Obstacle, ...] | None = None,
    barrier: BarrierParams | None = None,
) -> Problem:
    """Trajectory-optimization benchmark used by the convergence experiments.

    Without ``obstacles`` the car gets the cluttered field and the other
    systems are obstacle-free.
    """
    model = make_model(system)
    d = DEFAULTS[system]
    if obstacles is None:
        obstacles = clutter_obstacles() if system == "car" else ()
    if horizon is None:
        horizon = {"car": 100, "quadrotor": 150, "arm": 100}[system]
    return Problem(
        model=model,
        cost=make_cost(model, d.target),
        horizon=horizon,
        x0=start_state(model, d.start),
        obstacles=tuple(obstacles),
        barrier=barrier or d.barrier,
    )
