"""Parallel multi-mode DDP with periodic perturbation rounds.

One driver covers plain multi-start DDP, the two max-entropy samplers and
the Stein-variational update: after every ``m`` DDP iterations the chosen
perturbation acts on all modes except the current best, then DDP resumes.  Because the best mode is never perturbed and DDP
iterations never increase cost, the ensemble's best cost is monotone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from svto.cost import Problem, trajectory_costs
from svto.ddp import (
    GainSchedule,
    QuadraticModel,
    SolverConfig,
    Trajectory,
    backward_with_ladder,
    ddp_iteration_batch,
)


class Perturbation(Protocol):
    def perturb(self, problem: Problem, ens: ParticleEnsemble, gains: GainSchedule,
                quad: QuadraticModel, rngs) -> None: ...


def mode_rngs(seed: int, n_modes: int) -> list[np.random.Generator]:
    """One independent stream per mode, derived from the run seed and mode index."""
    return [np.random.default_rng([seed, n]) for n in range(n_modes)]


@dataclass
class ParticleEnsemble:
    """``N`` dynamically feasible trajectories with their costs and regularization."""

    states: np.ndarray
    controls: np.ndarray
    costs: np.ndarray
    reg: np.ndarray

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.costs))

    @property
    def size(self) -> int:
        return self.costs.shape[0]

    def trajectory(self, n: int) -> Trajectory:
        return Trajectory(self.states[n].copy(), self.controls[n].copy(), float(self.costs[n]))

    def best(self) -> Trajectory:
        return self.trajectory(self.best_index)

    @classmethod
    def from_controls(cls, problem: Problem, controls: np.ndarray, reg_init: float = 0.0) -> ParticleEnsemble:
        U = np.array(controls, dtype=float)
        X = problem.model.rollout(problem.x0, U)
        J = trajectory_costs(problem, X, U)
        J = np.where(np.isfinite(J), J, np.inf)
        return cls(X, U, J, np.full(U.shape[0], float(reg_init)))

    @classmethod
    def initialize(cls, problem: Problem, nominal: np.ndarray, n_modes: int, sigma0,
                   rngs, reg_init: float = 0.0) -> ParticleEnsemble:
        """Mode 0 follows ``nominal``; the others add ``N(0, sigma0^2)`` noise per channel."""
        nominal = np.asarray(nominal, dtype=float)
        U = np.repeat(nominal[None], n_modes, axis=0)
        for n in range(1, n_modes):
            U[n] = nominal + np.asarray(sigma0) * rngs[n].standard_normal(nominal.shape)
        return cls.from_controls(problem, U, reg_init)

    def warm_start(self, problem: Problem) -> None:
        """Shift controls one step (repeating the last) and re-roll from ``problem.x0``."""
        U = np.concatenate([self.controls[:, 1:], self.controls[:, -1:]], axis=1)
        fresh = ParticleEnsemble.from_controls(problem, U)
        self.states, self.controls, self.costs = fresh.states, fresh.controls, fresh.costs


@dataclass
class EnsembleSolver:
    """Scheduled loop: one DDP iteration for all modes per step, preceded by a
    perturbation round at every nonzero multiple of ``m``.

    So ``m`` deterministic iterations always come before the first round, and
    ``m >= n_iters`` never perturbs.
    """

    config: SolverConfig = field(default_factory=SolverConfig)
    perturbation: Perturbation | None = None
    m: int = 5

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("update period m must be at least 1")

    def iterate(self, problem: Problem, ens: ParticleEnsemble, rngs, n_iters: int,
                start: int = 0, trace: list[float] | None = None) -> ParticleEnsemble:
        for i in range(start, start + n_iters):
            if self.perturbation is not None and ens.size > 1 and i > 0 and i % self.m == 0:
                quad, gains, _, ok, _ = backward_with_ladder(
                    problem, ens.states, ens.controls, ens.reg, self.config
                )
                if ok.all():
                    self.perturbation.perturb(problem, ens, gains, quad, rngs)
            res = ddp_iteration_batch(problem, ens.states, ens.controls, ens.costs, ens.reg, self.config)
            ens.states, ens.controls, ens.costs, ens.reg = res.states, res.controls, res.costs, res.reg
            if trace is not None:
                trace.append(float(ens.costs.min()))
        return ens


@dataclass
class EnsembleResult:
    best: Trajectory
    gains: GainSchedule
    ensemble: ParticleEnsemble
    cost_trace: list[float]


def solve_ensemble(
    problem: Problem,
    nominal: np.ndarray,
    n_modes: int,
    solver: EnsembleSolver,
    seed: int = 0,
    sigma0: float = 0.5,
    n_iters: int | None = None,
) -> EnsembleResult:
    """Initialize ``n_modes`` modes around ``nominal`` and run the scheduled loop.

    ``cost_trace[0]`` is the initial best cost; entry ``i`` is the best cost
    after iteration ``i``.
    """
    if n_modes < 1:
        raise ValueError("need at least one mode")
    rngs = mode_rngs(seed, n_modes)
    ens = ParticleEnsemble.initialize(problem, nominal, n_modes, sigma0, rngs, solver.config.reg_init)
    trace = [float(ens.costs.min())]
    n_iters = solver.config.max_iters if n_iters is None else n_iters
    solver.iterate(problem, ens, rngs, n_iters, trace=trace)
    best = ens.best()
    _, gains, _, _, _ = backward_with_ladder(
        problem, best.states[None], best.controls[None], np.array([solver.config.reg_init]), solver.config
    )
    return EnsembleResult(best, GainSchedule(gains.kappa[0], gains.K[0]), ens, trace)
