"""Deterministic (iLQR-style) DDP on barrier-augmented problems.

All heavy lifting happens in the ``*_batch`` functions, which carry a
leading mode axis so that ensembles of trajectories are optimized in one
vectorized sweep.  The single-trajectory functions wrap them with a batch
of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from svto._kernels import backward_kernel
from svto.cost import Problem, cost_derivatives, trajectory_costs


@dataclass
class Trajectory:
    states: np.ndarray
    controls: np.ndarray
    cost: float


class GainSchedule(NamedTuple):
    """Feedforward ``kappa`` (..., T, n_u) and feedback ``K`` (..., T, n_u, n_x)."""

    kappa: np.ndarray
    K: np.ndarray


class QuadraticModel(NamedTuple):
    """Q-function derivatives over (..., T) and value derivatives over (..., T+1).

    ``Q_uu`` is the regularized matrix actually factorized in the backward pass.
    """

    Q_x: np.ndarray
    Q_u: np.ndarray
    Q_xx: np.ndarray
    Q_ux: np.ndarray
    Q_uu: np.ndarray
    V_x: np.ndarray
    V_xx: np.ndarray


def _halvings(n: int = 11) -> tuple[float, ...]:
    return tuple(0.5**k for k in range(n))


@dataclass(frozen=True)
class SolverConfig:
    """Iteration budget, Levenberg ladder on ``Q_uu`` and line-search multipliers.

    ``reg_init = 0`` means no regularization until a factorization fails;
    the ladder then starts at ``reg_min`` and multiplies by ``reg_factor``.
    """

    max_iters: int = 100
    reg_init: float = 0.0
    reg_min: float = 1e-9
    reg_max: float = 1e6
    reg_factor: float = 10.0
    line_search_steps: tuple[float, ...] = field(default_factory=_halvings)
    convergence_tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if not 0 < self.reg_min <= self.reg_max:
            raise ValueError("need 0 < reg_min <= reg_max")
        if self.reg_init != 0.0 and not self.reg_min <= self.reg_init <= self.reg_max:
            raise ValueError("reg_init must be 0 or lie in [reg_min, reg_max]")
        steps = tuple(float(s) for s in self.line_search_steps)
        if not steps or any(not 0 < s <= 1 for s in steps):
            raise ValueError("line search multipliers must lie in (0, 1]")
        object.__setattr__(self, "line_search_steps", steps)

    def raise_reg(self, reg: np.ndarray) -> np.ndarray:
        return np.maximum(reg * self.reg_factor, self.reg_min)

    def lower_reg(self, reg: np.ndarray) -> np.ndarray:
        reg = reg / self.reg_factor
        return np.where(reg < self.reg_min, 0.0, reg)


def cholesky_mask(a: np.ndarray) -> np.ndarray:
    """True where the stacked matrices admit a Cholesky factorization."""
    try:
        np.linalg.cholesky(a)
        return np.ones(a.shape[:-2], dtype=bool)
    except np.linalg.LinAlgError:
        ok = np.empty(a.shape[:-2], dtype=bool)
        for idx in np.ndindex(*a.shape[:-2]):
            try:
                np.linalg.cholesky(a[idx])
                ok[idx] = True
            except np.linalg.LinAlgError:
                ok[idx] = False
        return ok


def backward_pass_batch(problem: Problem, X: np.ndarray, U: np.ndarray, reg: np.ndarray):
    """Backward recursion for a batch of trajectories (B, T+1, n_x) / (B, T, n_u).

    Returns ``(QuadraticModel, GainSchedule, expected_reduction, ok)``; ``ok``
    is False for modes whose regularized ``Q_uu`` failed to factorize at some
    timestep (their outputs are meaningless).
    """
    d = cost_derivatives(problem, X, U)
    fx, fu = problem.model.jacobians(X[:, :-1], U)
    c = np.ascontiguousarray
    with np.errstate(all="ignore"):
        out = backward_kernel(
            c(fx), c(fu), c(d.l_x), c(d.l_u), c(d.l_xx), c(d.l_ux), c(d.l_uu),
            c(d.lf_x), c(d.lf_xx), c(np.broadcast_to(np.asarray(reg, dtype=float), U.shape[:1])),
        )
    Q_x, Q_u, Q_xx, Q_ux, Q_uu, V_x, V_xx, kappa, K, ok, red = out
    ok &= np.isfinite(kappa).all(axis=(1, 2)) & np.isfinite(K).all(axis=(1, 2, 3))
    quad = QuadraticModel(Q_x, Q_u, Q_xx, Q_ux, Q_uu, V_x, V_xx)
    return quad, GainSchedule(kappa, K), red, ok


def feedback_rollout(
    problem: Problem,
    X: np.ndarray,
    U: np.ndarray,
    offsets: np.ndarray,
    K: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Roll out ``u_t = U_t + offset_t + K_t (x_t - X_t)`` for every candidate.

    ``X``/``U``/``K`` carry a mode axis (B, ...); ``offsets`` has shape
    (B, S, T, n_u) with one slice per candidate step.  Returns states,
    controls and costs with shapes (B, S, T+1, n_x), (B, S, T, n_u), (B, S);
    non-finite costs are reported as ``inf``.
    """
    with np.errstate(all="ignore"):
        xs, us = problem.model.feedback_rollout(problem.x0, X, U, offsets, K)
        J = trajectory_costs(problem, xs, us)
    bad = ~np.isfinite(J) | ~np.isfinite(xs).all(axis=(-1, -2))
    J = np.where(bad, np.inf, J)
    return xs, us, J


@dataclass
class IterationResult:
    states: np.ndarray
    controls: np.ndarray
    costs: np.ndarray
    reg: np.ndarray
    gains: GainSchedule
    quad: QuadraticModel
    accepted: np.ndarray
    expected_reduction: np.ndarray


def backward_with_ladder(problem: Problem, X, U, reg: np.ndarray, config: SolverConfig):
    """Backward pass, raising each failing mode's regularization until it succeeds.

    Returns ``(quad, gains, expected_reduction, ok, reg)``; ``ok`` is False
    only for modes that still fail at ``reg_max``.
    """
    reg = np.array(reg, dtype=float)
    quad, gains, red, ok = backward_pass_batch(problem, X, U, reg)
    todo = np.flatnonzero(~ok)
    while todo.size:
        reg[todo] = config.raise_reg(reg[todo])
        todo = todo[reg[todo] <= config.reg_max]
        if not todo.size:
            break
        q2, g2, r2, ok2 = backward_pass_batch(problem, X[todo], U[todo], reg[todo])
        for arr, new in zip(quad + gains, q2 + g2):
            arr[todo] = new
        red[todo] = r2
        ok[todo] = ok2
        todo = todo[~ok2]
    return quad, gains, red, ok, reg


def ddp_iteration_batch(
    problem: Problem,
    X: np.ndarray,
    U: np.ndarray,
    J: np.ndarray,
    reg: np.ndarray,
    config: SolverConfig,
) -> IterationResult:
    """One backward pass plus line-searched forward pass for every mode.

    A mode takes the largest multiplier that strictly lowers its cost; if no
    multiplier does, the mode is left untouched and its regularization is
    raised.
    """
    quad, gains, red, ok, reg = backward_with_ladder(problem, X, U, reg, config)
    steps = np.asarray(config.line_search_steps)
    offsets = steps[None, :, None, None] * gains.kappa[:, None]
    xs, us, Js = feedback_rollout(problem, X, U, offsets, gains.K)

    better = (Js < J[:, None]) & ok[:, None]
    accepted = better.any(axis=1)
    first = np.argmax(better, axis=1)
    rows = np.arange(X.shape[0])
    X_new = np.where(accepted[:, None, None], xs[rows, first], X)
    U_new = np.where(accepted[:, None, None], us[rows, first], U)
    J_new = np.where(accepted, Js[rows, first], J)
    reg_new = np.where(accepted, config.lower_reg(reg), config.raise_reg(reg))
    return IterationResult(X_new, U_new, J_new, reg_new, gains, quad, accepted, red)


def initial_trajectory(problem: Problem, controls) -> Trajectory:
    """Roll ``controls`` out from ``problem.x0`` and attach the cost."""
    U = np.array(controls, dtype=float)
    if U.shape != (problem.horizon, problem.model.n_u):
        raise ValueError(f"controls must have shape ({problem.horizon}, {problem.model.n_u})")
    X = problem.model.rollout(problem.x0, U)
    return Trajectory(X, U, float(trajectory_costs(problem, X, U)))


def backward_pass(problem: Problem, traj: Trajectory, reg: float = 0.0):
    """Single-trajectory backward pass.

    Returns ``(QuadraticModel, GainSchedule, expected_reduction)``.

    Raises:
        np.linalg.LinAlgError: if ``Q_uu + reg*I`` is not positive definite.
    """
    quad, gains, red, ok = backward_pass_batch(
        problem, traj.states[None], traj.controls[None], np.array([reg])
    )
    if not ok[0]:
        raise np.linalg.LinAlgError("backward pass failed: regularized Q_uu not positive definite")
    return (
        QuadraticModel(*(a[0] for a in quad)),
        GainSchedule(gains.kappa[0], gains.K[0]),
        float(red[0]),
    )


def forward_pass(problem: Problem, traj: Trajectory, gains: GainSchedule, step_mult: float) -> Trajectory:
    """Closed-loop rollout ``u = u_bar + step_mult * kappa + K (x - x_bar)``."""
    offsets = step_mult * gains.kappa[None, None]
    xs, us, J = feedback_rollout(
        problem, traj.states[None], traj.controls[None], offsets, gains.K[None]
    )
    return Trajectory(xs[0, 0], us[0, 0], float(J[0, 0]))


def solve_one_iteration(problem: Problem, traj: Trajectory, config: SolverConfig, reg: float = 0.0):
    """Returns ``(Trajectory, GainSchedule, QuadraticModel, new_reg)``."""
    res = ddp_iteration_batch(
        problem,
        traj.states[None],
        traj.controls[None],
        np.array([traj.cost]),
        np.array([reg], dtype=float),
        config,
    )
    out = Trajectory(res.states[0], res.controls[0], float(res.costs[0]))
    gains = GainSchedule(res.gains.kappa[0], res.gains.K[0])
    quad = QuadraticModel(*(a[0] for a in res.quad))
    return out, gains, quad, float(res.reg[0])


@dataclass
class DDPResult:
    trajectory: Trajectory
    gains: GainSchedule
    cost_trace: list[float]
    iterations: int
    converged: bool


def solve(problem: Problem, controls, config: SolverConfig | None = None) -> DDPResult:
    """Plain DDP from an initial control sequence."""
    config = config or SolverConfig()
    traj = initial_trajectory(problem, controls)
    reg = config.reg_init
    trace = [traj.cost]
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        res = ddp_iteration_batch(
            problem,
            traj.states[None],
            traj.controls[None],
            np.array([traj.cost]),
            np.array([reg], dtype=float),
            config,
        )
        decrease = traj.cost - float(res.costs[0])
        traj = Trajectory(res.states[0], res.controls[0], float(res.costs[0]))
        reg = float(res.reg[0])
        trace.append(traj.cost)
        stalled = not res.accepted[0] and abs(res.expected_reduction[0]) < config.convergence_tol
        if (res.accepted[0] and decrease < config.convergence_tol) or stalled:
            converged = True
            break
        if reg > config.reg_max:
            break
    # Report the gains of the final trajectory, not of the last accepted step.
    _, gains, _, _, _ = backward_with_ladder(
        problem, traj.states[None], traj.controls[None], np.array([config.reg_init]), config
    )
    return DDPResult(traj, GainSchedule(gains.kappa[0], gains.K[0]), trace, it, converged)
