"""Sampling-based MPC baselines: MPPI with unimodal, multimodal and Stein-particle nominals.

Constraints are handled with a crash penalty instead of barriers: a rollout
that enters an obstacle stops moving and pays ``crash_cost`` for every
remaining timestep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from svto.benchmarks import nominal_controls
from svto.cost import Problem, obstacle_constraints, stage_cost, terminal_cost
from svto.svddp import median_bandwidth, svnm_gradient


@dataclass(frozen=True)
class MppiConfig:
    """``n_samples`` is the total budget per call, split evenly across modes or particles."""

    n_samples: int = 2048
    lam: float = 1.0
    sigma: tuple[float, ...] = (1.0,)
    crash_cost: float = 1e4
    n_modes: int = 8
    stein_step: float = 1.0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if not self.lam > 0:
            raise ValueError("lam (temperature) must be positive")
        sigma = tuple(float(s) for s in np.atleast_1d(self.sigma))
        if any(not s > 0 for s in sigma):
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "sigma", sigma)
        if self.n_modes < 1:
            raise ValueError("n_modes must be at least 1")


@dataclass
class SampleBatch:
    controls: np.ndarray
    costs: np.ndarray
    weights: np.ndarray


def crash_states(problem: Problem, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Freeze each rollout at its first obstacle contact.

    Returns the frozen states and a (..., T+1) mask of violating timesteps.
    Contact uses the inflated radius (radius + margin).
    """
    hit = np.zeros(X.shape[:-1], dtype=bool)
    for group in problem.obstacle_groups:
        g, _ = obstacle_constraints(group, X)
        hit |= (g > 0).any(axis=-1)
    if not hit.any():
        return X, hit
    T1 = X.shape[-2]
    first = np.where(hit.any(axis=-1), np.argmax(hit, axis=-1), T1)
    t = np.arange(T1)
    frozen_idx = np.minimum(t, first[..., None])
    Xf = np.take_along_axis(X, frozen_idx[..., None], axis=-2)
    mask = t >= first[..., None]
    return Xf, mask


def rollout_cost(problem: Problem, controls, crash_cost: float) -> np.ndarray:
    """Quadratic cost of the frozen rollout plus ``crash_cost`` per violating timestep."""
    U = np.asarray(controls, dtype=float)
    X = problem.model.rollout(problem.x0, U)
    Xf, mask = crash_states(problem, X)
    c = problem.cost
    with np.errstate(all="ignore"):
        J = stage_cost(c, Xf[..., :-1, :], U).sum(axis=-1) + terminal_cost(c, Xf[..., -1, :])
    J = J + crash_cost * mask.sum(axis=-1)
    J = np.where(np.isfinite(J), J, np.inf)
    return J if np.ndim(J) else float(J)


def _sigma(config: MppiConfig, n_u: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(config.sigma), (n_u,))


def importance_weights(costs: np.ndarray, lam: float) -> np.ndarray:
    """``exp(-(J - min J) / lam)``, normalized; infinite costs get zero weight."""
    J = np.asarray(costs, dtype=float)
    finite = np.isfinite(J)
    w = np.zeros_like(J)
    w[finite] = np.exp(-(J[finite] - J[finite].min()) / lam)
    return w / w.sum()


def mppi_update(
    problem: Problem, nominal, config: MppiConfig, rng: np.random.Generator, n_samples: int | None = None
) -> tuple[np.ndarray, SampleBatch | None]:
    """One path-integral update of a nominal control sequence.

    Samples are clamped to the control bounds before rollout, and the new
    nominal is the weighted average of the clamped samples.  If every
    sample has infinite cost the nominal is returned unchanged.
    """
    U = np.asarray(nominal, dtype=float)
    model = problem.model
    S = config.n_samples if n_samples is None else n_samples
    noise = rng.standard_normal((S,) + U.shape) * _sigma(config, model.n_u)
    V = model.clip(U + noise)
    J = rollout_cost(problem, V, config.crash_cost)
    if not np.isfinite(J).any():
        return U.copy(), None
    w = importance_weights(J, config.lam)
    U_new = np.tensordot(w, V, axes=(0, 0))
    return U_new, SampleBatch(V, J, w)


def _shift(U: np.ndarray) -> np.ndarray:
    return np.concatenate([U[..., 1:, :], U[..., -1:, :]], axis=-2)


def stein_repulsion(particles: np.ndarray) -> np.ndarray:
    """Repulsive SVGD direction for flattened control-sequence particles (N, T, n_u)."""
    N = particles.shape[0]
    flat = particles.reshape(N, -1)
    L = median_bandwidth(flat)
    return svnm_gradient(flat, L).reshape(particles.shape)


@dataclass
class MppiPlanner:
    """UG-MPPI (``variant="ug"``), MG-MPPI (``"mg"``) or SV-MPPI (``"sv"``).

    MG and SV keep ``config.n_modes`` nominal sequences and split the
    sample budget evenly between them; the executed control comes from the
    nominal with the lowest rollout cost.  SV additionally pushes the
    nominals apart with one repulsive SVGD step per call.
    """

    config: MppiConfig = field(default_factory=MppiConfig)
    variant: str = "ug"
    _U: np.ndarray | None = field(default=None, init=False, repr=False)
    _rng: np.random.Generator | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.variant not in ("ug", "mg", "sv"):
            raise ValueError(f"unknown MPPI variant {self.variant!r}")

    @property
    def n_modes(self) -> int:
        return 1 if self.variant == "ug" else self.config.n_modes

    def reset(self, problem: Problem, seed: int) -> None:
        self._rng = np.random.default_rng(seed)
        self._U = None

    def plan(self, problem: Problem) -> np.ndarray:
        model = problem.model
        N = self.n_modes
        if self._U is None:
            base = nominal_controls(model, problem.horizon)
            U = np.repeat(base[None], N, axis=0)
            for n in range(1, N):
                U[n] = model.clip(base + self._rng.standard_normal(base.shape) * _sigma(self.config, model.n_u))
        else:
            U = _shift(self._U)
        per_mode = max(1, self.config.n_samples // N)
        for n in range(N):
            U[n], _ = mppi_update(problem, U[n], self.config, self._rng, per_mode)
        if self.variant == "sv" and N > 1:
            U = model.clip(U + self.config.stein_step * stein_repulsion(U))
        self._U = U
        best = 0 if N == 1 else int(np.argmin(rollout_cost(problem, U, self.config.crash_cost)))
        return model.clip(U[best, 0])
