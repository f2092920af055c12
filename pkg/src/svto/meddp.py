"""Maximum-entropy sampling policies used to perturb DDP trajectories.

Around a converged (or partially converged) nominal trajectory the
entropy-regularized Bellman backup yields a Gaussian policy
``N(kappa, alpha * Q_uu^-1)`` on the control deviation.  With several
nominal trajectories the policy becomes a mixture whose weights are a
softmax of ``-V / alpha`` over the modes' values.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from svto.cost import Problem, trajectory_costs
from svto.ddp import GainSchedule, QuadraticModel, SolverConfig, Trajectory, feedback_rollout
from svto.ensemble import EnsembleResult, EnsembleSolver, solve_ensemble

log = logging.getLogger(__name__)


def entropy_offset(Q_uu, alpha: float, n_u: int | None = None):
    """``(alpha/2) [ln det Q_uu - n_u ln(2 pi alpha)]``; batches over leading axes."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    Q_uu = np.asarray(Q_uu, dtype=float)
    n_u = Q_uu.shape[-1] if n_u is None else n_u
    try:
        L = np.linalg.cholesky(Q_uu)
    except np.linalg.LinAlgError:
        raise ValueError("Q_uu must be positive definite") from None
    logdet = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)
    out = 0.5 * alpha * (logdet - n_u * np.log(2.0 * np.pi * alpha))
    return out if np.ndim(out) else float(out)


def mode_weights(values, alpha: float) -> np.ndarray:
    """Softmax of ``-values / alpha`` computed with max-subtraction."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("values must be a non-empty vector")
    z = -v / alpha
    finite = np.isfinite(z)
    if not finite.any():
        return np.full(v.size, 1.0 / v.size)
    z = np.where(finite, z - z[finite].max(), -np.inf)
    w = np.exp(z)
    return w / w.sum()


def guard_collapse(omega, floor: float) -> np.ndarray:
    """Raise every weight to at least ``floor`` while keeping the sum at one.

    Weights are rescaled by a common factor ``c`` and clamped from below,
    ``omega'_i = max(floor, c * omega_i)``, with ``c`` fixed by the sum
    constraint.  Ordering is preserved because the map is monotone.
    """
    w = np.asarray(omega, dtype=float)
    n = w.size
    if not 0 <= floor < 1.0 / n:
        raise ValueError(f"collapse floor must lie in [0, 1/N) = [0, {1.0 / n:g}), got {floor}")
    if floor == 0 or w.min() >= floor:
        return w.copy()
    order = np.argsort(w, kind="stable")
    ws = w[order]
    suffix = np.cumsum(ws[::-1])[::-1]  # suffix[k] = sum of ws[k:]
    for k in range(1, n):
        # Clamp the k smallest; the rest share the remaining mass proportionally.
        c = (1.0 - k * floor) / suffix[k]
        if c * ws[k] >= floor:
            break
    out = np.maximum(floor, c * w)
    out[order[:k]] = floor
    return out


@dataclass(frozen=True)
class UnimodalPolicy:
    """Gaussian feedback policy around one nominal trajectory.

    ``scale_tril[t]`` is a lower-triangular square root of the covariance
    ``alpha * Q_uu[t]^-1``.
    """

    states: np.ndarray
    controls: np.ndarray
    kappa: np.ndarray
    K: np.ndarray
    scale_tril: np.ndarray
    alpha: float

    @classmethod
    def from_backward(cls, traj: Trajectory, gains: GainSchedule, quad: QuadraticModel, alpha: float):
        return cls(
            traj.states, traj.controls, gains.kappa, gains.K, policy_scale(quad.Q_uu, alpha), alpha
        )

    @property
    def covariance(self) -> np.ndarray:
        return self.scale_tril @ np.swapaxes(self.scale_tril, -1, -2)


def policy_scale(Q_uu: np.ndarray, alpha: float) -> np.ndarray:
    """Cholesky factor of ``alpha * Q_uu^-1`` for stacked ``Q_uu``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    cov = alpha * np.linalg.inv(Q_uu)
    return np.linalg.cholesky(0.5 * (cov + np.swapaxes(cov, -1, -2)))


def sample_rollouts(
    problem: Problem,
    X: np.ndarray,
    U: np.ndarray,
    kappa: np.ndarray,
    scale_tril: np.ndarray,
    K: np.ndarray | None,
    noise: np.ndarray,
):
    """Roll out ``u = U + kappa + L z + K dx`` for stacked policies and noises.

    Every argument carries a leading sample axis.  Returns states, controls
    and costs (non-finite costs reported as ``inf``).
    """
    offsets = kappa + (scale_tril @ noise[..., None])[..., 0]
    xs, us, J = feedback_rollout(problem, X, U, offsets[:, None], K)
    return xs[:, 0], us[:, 0], J[:, 0]


def draw_samples(
    problem: Problem,
    policies: Sequence[UnimodalPolicy],
    choices: Sequence[int],
    rngs: Sequence[np.random.Generator],
    with_feedback: bool = True,
    max_retries: int = 3,
):
    """One sampled trajectory per ``(choice, rng)`` pair.

    Sample ``j`` follows ``policies[choices[j]]`` with noise from ``rngs[j]``.
    Non-finite rollouts are redrawn up to ``max_retries`` times, after which
    the chosen policy's nominal trajectory is returned unperturbed.
    """
    T, n_u = problem.horizon, problem.model.n_u
    pol = [policies[c] for c in choices]
    X = np.stack([p.states for p in pol])
    U = np.stack([p.controls for p in pol])
    kappa = np.stack([p.kappa for p in pol])
    L = np.stack([p.scale_tril for p in pol])
    K = np.stack([p.K for p in pol]) if with_feedback else None

    noise = np.stack([r.standard_normal((T, n_u)) for r in rngs])
    xs, us, J = sample_rollouts(problem, X, U, kappa, L, K, noise)
    for _ in range(max_retries):
        bad = np.flatnonzero(~np.isfinite(J))
        if not bad.size:
            break
        noise = np.stack([rngs[j].standard_normal((T, n_u)) for j in bad])
        xs[bad], us[bad], J[bad] = sample_rollouts(
            problem, X[bad], U[bad], kappa[bad], L[bad], None if K is None else K[bad], noise
        )
    bad = np.flatnonzero(~np.isfinite(J))
    if bad.size:
        log.warning("%d samples stayed non-finite after %d retries; using nominal", bad.size, max_retries)
        xs[bad], us[bad] = X[bad], U[bad]
        J[bad] = trajectory_costs(problem, X[bad], U[bad])
    return xs, us, J


def sample_perturbation(
    problem: Problem,
    policy: UnimodalPolicy | Sequence[UnimodalPolicy],
    rng: np.random.Generator,
    with_feedback: bool = True,
    weights=None,
    max_retries: int = 3,
) -> Trajectory:
    """Sample one trajectory from a unimodal policy or from a mixture.

    For a mixture the mode is drawn from ``weights`` once, before the first
    timestep, and held for the whole horizon.
    """
    if isinstance(policy, UnimodalPolicy):
        policies, choice = [policy], 0
    else:
        policies = list(policy)
        if weights is None:
            raise ValueError("a mixture needs mode weights")
        choice = int(rng.choice(len(policies), p=np.asarray(weights, dtype=float)))
    xs, us, J = draw_samples(problem, policies, [choice], [rng], with_feedback, max_retries)
    return Trajectory(xs[0], us[0], float(J[0]))


@dataclass(frozen=True)
class MaxEntSampling:
    """Ensemble perturbation by sampling from the max-entropy policy.

    ``multimodal=False``: every non-best mode is replaced by a sample from
    the best mode's Gaussian.  ``multimodal=True``: each non-best mode first
    draws a mode from the collapse-guarded mixture weights, then samples
    from that mode's Gaussian.
    """

    alpha: float = 30.0
    multimodal: bool = False
    collapse_floor: float = 0.02
    with_feedback: bool = True
    max_retries: int = 3

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.collapse_floor < 0:
            raise ValueError("collapse_floor must be nonnegative")

    def weights(self, costs: np.ndarray, Q_uu: np.ndarray) -> np.ndarray:
        """Guarded mixture weights from total cost plus summed entropy offsets."""
        values = costs + entropy_offset(Q_uu, self.alpha).sum(axis=-1)
        n = costs.shape[0]
        floor = min(self.collapse_floor, 0.5 / n)
        return guard_collapse(mode_weights(values, self.alpha), floor)

    def perturb(self, problem, ens, gains: GainSchedule, quad: QuadraticModel, rngs) -> None:
        N = ens.costs.shape[0]
        best = ens.best_index
        others = [n for n in range(N) if n != best]
        if not others:
            return
        L = policy_scale(quad.Q_uu, self.alpha)
        policies = [
            UnimodalPolicy(ens.states[n], ens.controls[n], gains.kappa[n], gains.K[n], L[n], self.alpha)
            for n in range(N)
        ]
        if self.multimodal:
            w = self.weights(ens.costs, quad.Q_uu)
            choices = [int(rngs[n].choice(N, p=w)) for n in others]
        else:
            choices = [best] * len(others)
        xs, us, J = draw_samples(
            problem, policies, choices, [rngs[n] for n in others], self.with_feedback, self.max_retries
        )
        ens.states[others], ens.controls[others], ens.costs[others] = xs, us, J


def meddp_solve(
    problem: Problem,
    controls,
    config: SolverConfig | None = None,
    sampling: MaxEntSampling | None = None,
    m: int = 5,
    n_modes: int = 8,
    seed: int = 0,
    sigma0: float = 0.5,
    n_iters: int | None = None,
) -> EnsembleResult:
    """UG- or MG-MEDDP (per ``sampling.multimodal``): sample every ``m``-th iteration, DDP otherwise."""
    solver = EnsembleSolver(config or SolverConfig(), sampling or MaxEntSampling(), m)
    return solve_ensemble(problem, controls, n_modes, solver, seed, sigma0, n_iters)
