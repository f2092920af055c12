"""Stein-variational perturbation of a DDP ensemble.

After DDP iterations every mode sits (approximately) at a stationary point
of its own Q-function, so the Stein gradient reduces to its kernel
repulsion term.  Each SV round computes, independently per timestep, a
block-diagonal Newton step on that repulsion, expands it over the
particles with the kernel, and applies it to every mode except the best
one through a step search that only insists on a finite cost.

Particles are single-timestep control vectors: ``particles[..., n, :]`` is
mode ``n``'s control at one timestep, and any leading axes (typically
time) are batch axes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from svto.cost import Problem
from svto.ddp import GainSchedule, QuadraticModel, SolverConfig, Trajectory, cholesky_mask, feedback_rollout
from svto.ensemble import EnsembleResult, EnsembleSolver, solve_ensemble

log = logging.getLogger(__name__)

BANDWIDTH_FLOOR = 1e-8
HESSIAN_REG = 1e-9


def kernel(a, b, L: float) -> float:
    """Gaussian kernel ``exp(-|a - b|^2 / L)``."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.exp(-(d @ d) / L))


def kernel_gradient(a, b, L: float) -> np.ndarray:
    """Gradient of ``kernel(a, b, L)`` with respect to ``a``."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return -(2.0 / L) * d * np.exp(-(d @ d) / L)


def _log_dim(d: int) -> float:
    # log(1) = 0 would make the heuristic meaningless for scalar controls.
    return np.log(d) if d > 1 else 1.0


def median_bandwidth(particles) -> np.ndarray | float:
    """Median off-diagonal squared distance over ``log(d)``, floored at 1e-8."""
    P = np.asarray(particles, dtype=float)
    N, d = P.shape[-2:]
    if N < 2:
        return BANDWIDTH_FLOOR if P.ndim == 2 else np.full(P.shape[:-2], BANDWIDTH_FLOOR)
    sq = _pairwise_sq(P)
    iu = np.triu_indices(N, k=1)
    L = np.median(sq[..., iu[0], iu[1]], axis=-1) / _log_dim(d)
    L = np.maximum(L, BANDWIDTH_FLOOR)
    return float(L) if np.ndim(L) == 0 else L


def _pairwise_sq(P: np.ndarray) -> np.ndarray:
    diff = P[..., :, None, :] - P[..., None, :, :]
    return np.einsum("...i,...i->...", diff, diff)


def kernel_terms(particles, L):
    """Kernel matrix ``k[..., n, s]`` and gradients ``g[..., n, s, :] = d k(u_n, u_s) / d u_n``."""
    P = np.asarray(particles, dtype=float)
    L = np.asarray(L, dtype=float)[..., None, None]
    diff = P[..., :, None, :] - P[..., None, :, :]
    k = np.exp(-np.einsum("...i,...i->...", diff, diff) / L)
    grad = -(2.0 / L)[..., None] * diff * k[..., None]
    return k, grad


def svnm_gradient(particles, L) -> np.ndarray:
    """Repulsive force on each particle, ``(1/N) sum_n d k(u_n, u_s) / d u_n``.

    This is the negative gradient of the Stein objective once the
    likelihood term has vanished at DDP stationarity.
    """
    _, grad = kernel_terms(particles, L)
    return grad.mean(axis=-3)


def svnm_hessian(particles, Q_uu, alpha: float, L) -> np.ndarray:
    """Block-diagonal Newton Hessian per particle.

    ``H[s] = (1/N) sum_n [Q_uu[n] k(u_n, u_s)^2 / alpha + g_ns g_ns^T]``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    k, grad = kernel_terms(particles, L)
    Q_uu = np.asarray(Q_uu, dtype=float)
    N = k.shape[-1]
    curv = np.einsum("...ns,...nij->...sij", k * k, Q_uu) / alpha
    outer = np.einsum("...nsi,...nsj->...sij", grad, grad)
    return (curv + outer) / N


@dataclass
class SteinUpdate:
    beta: np.ndarray
    w: np.ndarray


def newton_direction(H, gradients, kmat, reg: float = HESSIAN_REG, reg_max: float = 1e6) -> SteinUpdate:
    """Solve ``(H + reg I) beta = -gradients`` per particle and compose ``w``.

    ``gradients`` is the gradient of the objective (the negative of
    :func:`svnm_gradient`).  ``w[..., s, :] = sum_n beta[..., n, :] k[..., n, s]``.
    Blocks that stay indefinite up to ``reg_max`` get ``beta = 0``.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(gradients, dtype=float)
    d = H.shape[-1]
    eye = np.eye(d)
    regs = np.full(H.shape[:-2], reg)
    ok = cholesky_mask(H + regs[..., None, None] * eye)
    while not ok.all():
        regs = np.where(ok, regs, regs * 10.0)
        failed = ~ok & (regs <= reg_max)
        if not failed.any():
            break
        ok = ok | (failed & cholesky_mask(H + regs[..., None, None] * eye))
    if not ok.all():
        log.warning("%d Newton blocks stayed indefinite; skipping their update", int((~ok).sum()))
    Hr = np.where(ok[..., None, None], H + regs[..., None, None] * eye, eye)
    beta = np.where(ok[..., None], np.linalg.solve(Hr, -g[..., None])[..., 0], 0.0)
    w = np.einsum("...ni,...ns->...si", beta, np.asarray(kmat, dtype=float))
    return SteinUpdate(beta, w)


def stein_directions(controls: np.ndarray, Q_uu: np.ndarray, alpha: float) -> np.ndarray:
    """Newton directions for a whole ensemble; returns ``w`` with the shape of ``controls`` (N, T, n_u)."""
    P = np.swapaxes(controls, 0, 1)  # (T, N, n_u)
    Q = np.swapaxes(Q_uu, 0, 1)
    L = median_bandwidth(P)
    k, grad = kernel_terms(P, L)
    force = grad.mean(axis=-3)
    N = k.shape[-1]
    H = (np.einsum("tns,tnij->tsij", k * k, Q) / alpha + np.einsum("tnsi,tnsj->tsij", grad, grad)) / N
    upd = newton_direction(H, -force, k)
    return np.swapaxes(upd.w, 0, 1)


def _check_eps(epsilons) -> np.ndarray:
    eps = np.asarray(epsilons, dtype=float)
    if eps.ndim != 1 or eps.size == 0 or eps[-1] != 0 or np.any(eps < 0) or np.any(np.diff(eps) > 0):
        raise ValueError("epsilon_array must be nonnegative, non-increasing and end with 0")
    return eps


def sv_line_search_batch(problem: Problem, X, U, W, K, epsilons):
    """Step search over ``epsilons`` for stacked modes.

    Each mode takes the first ``eps > 0`` whose rollout of
    ``U + eps W + K dx`` has a finite cost; if there is none it keeps its
    trajectory exactly.  Returns states, controls, costs and the chosen step
    (0 when unchanged); costs for unchanged modes are ``None`` entries to be
    filled by the caller.
    """
    eps = _check_eps(epsilons)
    pos = eps[eps > 0]
    M = X.shape[0]
    chosen = np.zeros(M)
    if not pos.size or not M:
        return X.copy(), U.copy(), np.full(M, np.nan), chosen
    offsets = pos[None, :, None, None] * W[:, None]
    xs, us, J = feedback_rollout(problem, X, U, offsets, K)
    finite = np.isfinite(J)
    has = finite.any(axis=1)
    first = np.argmax(finite, axis=1)
    rows = np.arange(M)
    X_new = np.where(has[:, None, None], xs[rows, first], X)
    U_new = np.where(has[:, None, None], us[rows, first], U)
    J_new = np.where(has, J[rows, first], np.nan)
    chosen[has] = pos[first[has]]
    return X_new, U_new, J_new, chosen


def sv_line_search(
    problem: Problem, traj: Trajectory, gains: GainSchedule, w, epsilons, with_feedback: bool = True
) -> Trajectory:
    """Apply ``u = u_bar + eps w + K (x - x_bar)`` with the largest ``eps`` giving a finite cost.

    The trailing ``eps = 0`` returns ``traj`` itself, so the search always
    terminates with a finite-cost trajectory when ``traj`` has one.
    """
    K = gains.K[None] if with_feedback else None
    xs, us, J, chosen = sv_line_search_batch(
        problem, traj.states[None], traj.controls[None], np.asarray(w, float)[None], K, epsilons
    )
    if chosen[0] == 0:
        return traj
    return Trajectory(xs[0], us[0], float(J[0]))


@dataclass(frozen=True)
class Schedule:
    """SV round every ``m``-th iteration with step search over ``epsilon_array``.

    ``epsilon_array`` must be non-increasing, nonnegative and end with 0.
    An all-zero array is accepted and turns every SV round into a no-op.
    """

    m: int = 5
    epsilon_array: tuple[float, ...] = (4.0, 3.0, 2.0, 1.0, 0.5, 0.0)

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("update period m must be at least 1")
        object.__setattr__(self, "epsilon_array", tuple(float(e) for e in _check_eps(self.epsilon_array)))


@dataclass(frozen=True)
class SteinPerturbation:
    """Ensemble perturbation by one Stein-variational Newton step per non-best mode."""

    alpha: float = 30.0
    epsilons: tuple[float, ...] = (4.0, 3.0, 2.0, 1.0, 0.5, 0.0)
    with_feedback: bool = True

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        object.__setattr__(self, "epsilons", tuple(float(e) for e in _check_eps(self.epsilons)))

    def perturb(self, problem, ens, gains: GainSchedule, quad: QuadraticModel, rngs=None) -> None:
        N = ens.costs.shape[0]
        best = ens.best_index
        others = np.array([n for n in range(N) if n != best], dtype=int)
        if not others.size:
            return
        W = stein_directions(ens.controls, quad.Q_uu, self.alpha)
        K = gains.K[others] if self.with_feedback else None
        xs, us, J, chosen = sv_line_search_batch(
            problem, ens.states[others], ens.controls[others], W[others], K, self.epsilons
        )
        moved = others[chosen > 0]
        ens.states[moved] = xs[chosen > 0]
        ens.controls[moved] = us[chosen > 0]
        ens.costs[moved] = J[chosen > 0]


def svddp_solve(
    problem: Problem,
    controls,
    config: SolverConfig | None = None,
    schedule: Schedule | None = None,
    n_modes: int = 8,
    seed: int = 0,
    alpha: float = 30.0,
    sigma0: float = 0.5,
    with_feedback: bool = True,
    n_iters: int | None = None,
) -> EnsembleResult:
    """Stein-variational DDP from a nominal control sequence.

    Mode 0 starts at ``controls``; the other modes add ``N(0, sigma0^2)``
    noise.  Runs ``n_iters`` (default ``config.max_iters``) DDP iterations
    with an SV round before every ``schedule.m``-th one.
    """
    schedule = schedule or Schedule()
    solver = EnsembleSolver(
        config or SolverConfig(),
        SteinPerturbation(alpha, schedule.epsilon_array, with_feedback),
        schedule.m,
    )
    return solve_ensemble(problem, controls, n_modes, solver, seed, sigma0, n_iters)
