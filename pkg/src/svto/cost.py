"""Quadratic task cost, obstacle/control constraints and the relaxed log barrier.

Constraints are written ``g(y) <= 0`` with ``y = (x, u)``.  They enter the
objective through the relaxed barrier, which is the log barrier for
``g <= -delta`` and a quadratic extension above it, so infeasible iterates
have a finite (large) cost.  Hessians keep only the outer-product term
``d2P/dg2 * g_y g_y^T``; the constraint-curvature term is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np

from svto.dynamics import DynamicsModel


@dataclass(frozen=True)
class BarrierParams:
    mu: float = 0.1
    delta: float = 0.05

    def __post_init__(self) -> None:
        if not (self.mu > 0 and self.delta > 0):
            raise ValueError(f"barrier needs mu > 0 and delta > 0, got {self}")


def _diag(w, n: int, name: str, strict: bool = False) -> np.ndarray:
    w = np.broadcast_to(np.asarray(w, dtype=float), (n,)).copy()
    if np.any(w < 0) or (strict and np.any(w <= 0)):
        raise ValueError(f"{name} weights must be {'positive' if strict else 'nonnegative'}")
    w.setflags(write=False)
    return w


@dataclass(frozen=True)
class QuadraticCost:
    """Diagonal weights: running state ``P``, control ``R``, terminal ``Qf``."""

    P: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    x_goal: np.ndarray

    def __post_init__(self) -> None:
        x_goal = np.asarray(self.x_goal, dtype=float).copy()
        x_goal.setflags(write=False)
        n_x = x_goal.shape[0]
        n_u = np.size(self.R)
        object.__setattr__(self, "x_goal", x_goal)
        object.__setattr__(self, "P", _diag(self.P, n_x, "P"))
        object.__setattr__(self, "Qf", _diag(self.Qf, n_x, "Qf"))
        object.__setattr__(self, "R", _diag(self.R, n_u, "R", strict=True))


def stage_cost(cost: QuadraticCost, x, u) -> np.ndarray:
    """``0.5 u'Ru + 0.5 (x-x_g)'P(x-x_g)``; broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != cost.x_goal.shape[0] or u.shape[-1] != cost.R.shape[0]:
        raise ValueError("state/control dimension does not match cost weights")
    dx = x - cost.x_goal
    return 0.5 * (u * u) @ cost.R + 0.5 * (dx * dx) @ cost.P


def terminal_cost(cost: QuadraticCost, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != cost.x_goal.shape[0]:
        raise ValueError("state dimension does not match cost weights")
    dx = x - cost.x_goal
    return 0.5 * (dx * dx) @ cost.Qf


def relaxed_barrier(g, params: BarrierParams):
    """Relaxed log barrier: ``-mu log(-g)`` for ``g <= -delta``, quadratic above."""
    value, _, _ = _barrier_terms(np.asarray(g, dtype=float), params.mu, params.delta)
    return value if np.ndim(value) else float(value)


def _barrier_terms(g: np.ndarray, mu: float, delta: float):
    """Value, first derivative and second derivative of the barrier w.r.t. ``g``."""
    log_branch = g <= -delta
    neg = np.maximum(-g, delta)
    s = (g + 2.0 * delta) / delta
    value = np.where(log_branch, -mu * np.log(neg), mu * (0.5 * (s * s - 1.0) - np.log(delta)))
    d1 = np.where(log_branch, mu / neg, mu * s / delta)
    d2 = np.where(log_branch, mu / (neg * neg), mu / delta**2)
    return value, d1, d2


def barrier_derivatives(g: float, g_y, g_yy, params: BarrierParams) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Gauss-Newton Hessian of ``relaxed_barrier(g(y))`` w.r.t. ``y``.

    ``g_yy`` is accepted for interface symmetry but never used: the term
    ``dP/dg * g_yy`` can be indefinite and is dropped on both branches.
    """
    g_y = np.asarray(g_y, dtype=float)
    _, d1, d2 = _barrier_terms(np.asarray(g, dtype=float), params.mu, params.delta)
    return d1 * g_y, d2 * np.outer(g_y, g_y)


@dataclass(frozen=True)
class Obstacle:
    """Ball (``axis=None``) or infinite cylinder around ``axis`` in position space.

    ``center`` lives in the model's position space (2D for the car, 3D for
    the quadrotor and the arm's end effector).  For a cylinder the
    coordinate along ``axis`` is ignored.
    """

    center: np.ndarray
    radius: float
    axis: int | None = None
    margin: float = 0.0

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=float).copy()
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        if not self.radius > 0:
            raise ValueError(f"obstacle radius must be positive, got {self.radius}")
        if self.margin < 0:
            raise ValueError(f"obstacle margin must be nonnegative, got {self.margin}")

    @property
    def kind(self) -> str:
        return "circular" if self.axis is None else "cylindrical"

    def active_dims(self) -> np.ndarray:
        dims = np.arange(self.center.shape[0])
        return dims if self.axis is None else dims[dims != self.axis]

    def squared_distance(self, p: np.ndarray) -> np.ndarray:
        dims = self.active_dims()
        d = p[..., dims] - self.center[dims]
        return np.sum(d * d, axis=-1)


def constraint_violation(x, obstacle: Obstacle, model: DynamicsModel | None = None):
    """``r^2 - |c - p|^2``: positive inside the obstacle.  Margin is not included.

    With ``model`` given, ``x`` is a full state and the position is extracted;
    otherwise ``x`` is already a position.
    """
    x = np.asarray(x, dtype=float)
    p = x if model is None else model.position(x)
    v = obstacle.radius**2 - obstacle.squared_distance(p)
    return v if np.ndim(v) else float(v)


@dataclass(frozen=True)
class Problem:
    """A finite-horizon optimal control problem with barrier-penalized constraints."""

    model: DynamicsModel
    cost: QuadraticCost
    horizon: int
    x0: np.ndarray
    obstacles: tuple[Obstacle, ...] = ()
    barrier: BarrierParams = field(default_factory=BarrierParams)
    control_bounds: bool = True

    def __post_init__(self) -> None:
        x0 = np.asarray(self.x0, dtype=float).copy()
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if x0.shape != (self.model.n_x,):
            raise ValueError("x0 dimension does not match the model")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")

    @cached_property
    def obstacle_groups(self) -> tuple[ObstacleGroup, ...]:
        return _obstacle_groups(self)

    def with_x0(self, x0) -> Problem:
        return replace(self, x0=x0)

    def with_barrier(self, barrier: BarrierParams) -> Problem:
        return replace(self, barrier=barrier)


class ObstacleGroup(NamedTuple):
    """Obstacles sharing the same active position coordinates, stacked."""

    idx: np.ndarray  # state indices of the active coordinates
    centers: np.ndarray  # (k, d)
    radii: np.ndarray  # (k,) radius + margin


def _obstacle_groups(problem: Problem) -> tuple[ObstacleGroup, ...]:
    pos = np.asarray(problem.model.position_indices)
    by_axis: dict = {}
    for obs in problem.obstacles:
        by_axis.setdefault(obs.axis, []).append(obs)
    groups = []
    for obs_list in by_axis.values():
        dims = obs_list[0].active_dims()
        groups.append(ObstacleGroup(
            pos[dims],
            np.array([o.center[dims] for o in obs_list]),
            np.array([o.radius + o.margin for o in obs_list]),
        ))
    return tuple(groups)


def obstacle_constraints(group: ObstacleGroup, X: np.ndarray):
    """Barrier constraints (..., k) for a group and their position gradients (..., k, d)."""
    d = X[..., None, group.idx] - group.centers
    g = group.radii**2 - np.sum(d * d, axis=-1)
    return g, -2.0 * d


def _control_g(problem: Problem, U: np.ndarray):
    m = problem.model
    return U - m.u_upper, m.u_lower - U


def trajectory_costs(problem: Problem, X: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Total barrier-augmented cost of trajectories ``X`` (..., T+1, n_x), ``U`` (..., T, n_u)."""
    c = problem.cost
    mu, delta = problem.barrier.mu, problem.barrier.delta
    with np.errstate(invalid="ignore", over="ignore"):
        total = stage_cost(c, X[..., :-1, :], U).sum(axis=-1) + terminal_cost(c, X[..., -1, :])
        for group in problem.obstacle_groups:
            g, _ = obstacle_constraints(group, X)
            total = total + _barrier_terms(g, mu, delta)[0].sum(axis=(-1, -2))
        if problem.control_bounds:
            for g in _control_g(problem, U):
                total = total + _barrier_terms(g, mu, delta)[0].sum(axis=(-1, -2))
    return total


def total_cost(problem: Problem, states: np.ndarray, controls: np.ndarray) -> float:
    """Barrier-augmented cost of one trajectory; non-finite states give a non-finite cost."""
    value = trajectory_costs(problem, np.asarray(states, float), np.asarray(controls, float))
    if not np.all(np.isfinite(states)):
        return float("nan")
    return float(value)


def cost_to_go(problem: Problem, X: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Per-timestep cost-to-go along trajectories, shape (..., T+1)."""
    c = problem.cost
    mu, delta = problem.barrier.mu, problem.barrier.delta
    stage = np.concatenate(
        [stage_cost(c, X[..., :-1, :], U), terminal_cost(c, X[..., -1:, :])], axis=-1
    )
    for group in problem.obstacle_groups:
        g, _ = obstacle_constraints(group, X)
        stage = stage + _barrier_terms(g, mu, delta)[0].sum(axis=-1)
    if problem.control_bounds:
        for g in _control_g(problem, U):
            stage[..., :-1] += _barrier_terms(g, mu, delta)[0].sum(axis=-1)
    return np.cumsum(stage[..., ::-1], axis=-1)[..., ::-1]


class CostDerivatives(NamedTuple):
    """Running derivatives over (..., T) and terminal derivatives over (...)."""

    l_x: np.ndarray
    l_u: np.ndarray
    l_xx: np.ndarray
    l_ux: np.ndarray
    l_uu: np.ndarray
    lf_x: np.ndarray
    lf_xx: np.ndarray


def cost_derivatives(problem: Problem, X: np.ndarray, U: np.ndarray) -> CostDerivatives:
    """Gradients and Gauss-Newton Hessians of the augmented cost at every timestep."""
    c = problem.cost
    mu, delta = problem.barrier.mu, problem.barrier.delta
    n_x, n_u = problem.model.n_x, problem.model.n_u
    batch = U.shape[:-1]

    dx = X - c.x_goal
    l_x = dx[..., :-1, :] * c.P
    lf_x = dx[..., -1, :] * c.Qf
    l_u = U * c.R
    l_xx = np.zeros(batch + (n_x, n_x))
    l_xx[..., np.arange(n_x), np.arange(n_x)] = c.P
    lf_xx = np.zeros(X.shape[:-2] + (n_x, n_x))
    lf_xx[..., np.arange(n_x), np.arange(n_x)] = c.Qf
    l_uu = np.zeros(batch + (n_u, n_u))
    l_uu[..., np.arange(n_u), np.arange(n_u)] = c.R
    l_ux = np.zeros(batch + (n_u, n_x))

    for group in problem.obstacle_groups:
        g, g_p = obstacle_constraints(group, X)
        _, d1, d2 = _barrier_terms(g, mu, delta)
        grad = np.einsum("...k,...ki->...i", d1, g_p)
        hess = np.einsum("...k,...ki,...kj->...ij", d2, g_p, g_p)
        idx = group.idx
        ix = np.ix_(idx, idx)
        l_x[..., idx] += grad[..., :-1, :]
        lf_x[..., idx] += grad[..., -1, :]
        l_xx[(Ellipsis,) + ix] += hess[..., :-1, :, :]
        lf_xx[(Ellipsis,) + ix] += hess[..., -1, :, :]

    if problem.control_bounds:
        g_hi, g_lo = _control_g(problem, U)
        _, d1_hi, d2_hi = _barrier_terms(g_hi, mu, delta)
        _, d1_lo, d2_lo = _barrier_terms(g_lo, mu, delta)
        l_u = l_u + d1_hi - d1_lo
        l_uu[..., np.arange(n_u), np.arange(n_u)] += d2_hi + d2_lo

    return CostDerivatives(l_x, l_u, l_xx, l_ux, l_uu, lf_x, lf_xx)
