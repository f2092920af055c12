"""Receding-horizon harness: random obstacle fields, episodes and summary metrics."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np

from svto.benchmarks import DEFAULTS, make_cost, nominal_controls, start_state
from svto.cost import BarrierParams, Obstacle, Problem, constraint_violation
from svto.ddp import SolverConfig
from svto.dynamics import DynamicsModel, make_model
from svto.ensemble import EnsembleSolver, ParticleEnsemble, Perturbation, mode_rngs

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObstacleField:
    obstacles: tuple[Obstacle, ...]
    start: np.ndarray
    target: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "start": [float(v) for v in self.start],
            "target": [float(v) for v in self.target],
            "obstacles": [
                {"center": [float(c) for c in o.center], "radius": float(o.radius),
                 "axis": o.axis, "margin": float(o.margin)}
                for o in self.obstacles
            ],
        }


@dataclass(frozen=True)
class FieldParams:
    """Rejection-sampling parameters for obstacle placement.

    Without ``corridor`` centers are uniform in ``box`` (``(lower, upper)``
    over position coordinates).  With ``corridor = w`` they are placed along
    the start-target segment, at a uniform fraction of its length within
    ``span``, and shifted sideways by a uniform offset in ``[-w, w]``, so the
    straight route is usually blocked.  For cylinders (``axis`` set) the
    coordinate along the axis is fixed to 0.
    """

    start: tuple[float, ...] = (0.0, 0.0)
    target: tuple[float, ...] = (5.0, 5.0)
    n_obstacles: tuple[int, int] = (8, 12)
    radius: tuple[float, float] = (0.3, 0.6)
    box: tuple[tuple[float, ...], tuple[float, ...]] = ((0.5, 0.5), (4.5, 4.5))
    clearance: float = 0.5
    margin: float = 0.05
    axis: int | None = None
    corridor: float | None = None
    span: tuple[float, float] = (0.2, 0.8)
    max_tries: int = 1000

    def __post_init__(self) -> None:
        lo, hi = self.n_obstacles
        if not 0 <= lo <= hi:
            raise ValueError("n_obstacles must be an increasing pair of nonnegative integers")
        if not 0 < self.radius[0] <= self.radius[1]:
            raise ValueError("radius range must be positive and increasing")


FIELD_PRESETS = {
    "car": FieldParams(n_obstacles=(5, 7), corridor=1.0),
    "quadrotor": FieldParams(
        start=(0.0, 0.0, 0.0),
        target=(5.0, 0.0, 5.0),
        n_obstacles=(5, 8),
        radius=(0.3, 0.6),
        box=((0.5, 0.0, 0.5), (4.5, 0.0, 4.5)),
        axis=1,
    ),
    "arm": FieldParams(
        start=(0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0),
        target=(0.4, 0.3, 0.6),
        n_obstacles=(1, 3),
        radius=(0.05, 0.1),
        box=((0.0, -0.3, 0.3), (0.5, 0.4, 0.9)),
        clearance=0.1,
    ),
}


def _surface_distance(p: np.ndarray, obs: Obstacle) -> float:
    return float(np.sqrt(obs.squared_distance(p)) - obs.radius)


def _corridor_point(rng, a: np.ndarray, b: np.ndarray, params: FieldParams) -> np.ndarray:
    """Point near segment ``a -> b``, offset in the plane orthogonal to the cylinder axis."""
    along = b - a
    dims = [i for i in range(a.shape[0]) if i != params.axis]
    side = np.zeros_like(a)
    side[dims[0]], side[dims[1]] = -along[dims[1]], along[dims[0]]
    side /= np.linalg.norm(side)
    frac = rng.uniform(*params.span)
    return a + frac * along + rng.uniform(-params.corridor, params.corridor) * side


def generate_field(seed: int, params: FieldParams, start_position=None) -> ObstacleField:
    """Place obstacles one by one, rejecting any that crowd the start or target.

    ``start_position`` is the start's position when ``params.start`` is not
    a position (the arm's start is a joint configuration).
    """
    rng = np.random.default_rng(seed)
    start = np.asarray(params.start, dtype=float)
    target = np.asarray(params.target, dtype=float)
    p_start = start if start_position is None else np.asarray(start_position, dtype=float)
    lo, hi = (np.asarray(b, dtype=float) for b in params.box)
    n = int(rng.integers(params.n_obstacles[0], params.n_obstacles[1] + 1))
    placed: list[Obstacle] = []
    tries = 0
    while len(placed) < n and tries < params.max_tries:
        tries += 1
        if params.corridor is None:
            center = rng.uniform(lo, hi)
        else:
            center = _corridor_point(rng, p_start, target, params)
        if params.axis is not None:
            center[params.axis] = 0.0
        obs = Obstacle(center, float(rng.uniform(*params.radius)), params.axis, params.margin)
        if min(_surface_distance(p_start, obs), _surface_distance(target, obs)) >= params.clearance:
            placed.append(obs)
    if len(placed) < n:
        log.warning("field %d: placed %d of %d obstacles", seed, len(placed), n)
    return ObstacleField(tuple(placed), start, target, seed)


@dataclass(frozen=True)
class MpcProtocol:
    dt: float = 0.02
    prediction_horizon: int = 60
    total_steps: int = 200
    success_radius: float = 0.5

    def __post_init__(self) -> None:
        if not (self.dt > 0 and self.prediction_horizon > 0 and self.total_steps > 0 and self.success_radius > 0):
            raise ValueError("protocol parameters must be positive")


PROTOCOLS = {
    "car": MpcProtocol(0.02, 60, 200),
    "quadrotor": MpcProtocol(0.01, 50, 350),
    "arm": MpcProtocol(0.02, 40, 150, success_radius=0.05),
}


@dataclass
class EpisodeRecord:
    states: np.ndarray
    controls: np.ndarray
    reached: bool
    violated: bool
    max_violation: float
    call_times: list[float]
    seed: int = 0
    field_seed: int = 0
    solver: str = ""

    @property
    def success(self) -> bool:
        return self.reached and not self.violated

    def to_dict(self) -> dict:
        return {
            "solver": self.solver,
            "field_seed": self.field_seed,
            "seed": self.seed,
            "success": self.success,
            "reached": self.reached,
            "violated": self.violated,
            "max_violation": self.max_violation,
            "steps": int(self.controls.shape[0]),
            "call_times": [float(t) for t in self.call_times],
            "states": self.states.tolist(),
            "controls": self.controls.tolist(),
        }


class Planner(Protocol):
    """Common interface for every MPC solver."""

    def reset(self, problem: Problem, seed: int) -> None: ...

    def plan(self, problem: Problem) -> np.ndarray: ...


@dataclass
class EnsemblePlanner:
    """DDP-family MPC: a persistent ensemble, shifted and re-optimized every call.

    The iteration counter runs across calls, so perturbation rounds happen
    every ``solver.m``-th DDP iteration of the whole episode.
    """

    solver: EnsembleSolver
    n_modes: int = 8
    sigma0: float = 0.5
    iters_per_call: int = 1
    first_call_iters: int = 1
    _ens: ParticleEnsemble | None = field(default=None, init=False, repr=False)
    _rngs: list = field(default_factory=list, init=False, repr=False)
    _count: int = field(default=0, init=False, repr=False)

    def reset(self, problem: Problem, seed: int) -> None:
        self._ens = None
        self._rngs = mode_rngs(seed, self.n_modes)
        self._count = 0

    def plan(self, problem: Problem) -> np.ndarray:
        if self._ens is None:
            nominal = nominal_controls(problem.model, problem.horizon)
            self._ens = ParticleEnsemble.initialize(
                problem, nominal, self.n_modes, self.sigma0, self._rngs, self.solver.config.reg_init
            )
            n = self.first_call_iters
        else:
            self._ens.warm_start(problem)
            self._ens.reg[:] = self.solver.config.reg_init
            n = self.iters_per_call
        self.solver.iterate(problem, self._ens, self._rngs, n, start=self._count)
        self._count += n
        return self._ens.controls[self._ens.best_index, 0].copy()


def make_ensemble_planner(
    perturbation: Perturbation | None,
    n_modes: int,
    sigma0: float,
    m: int = 1,
    iters_per_call: int = 1,
    first_call_iters: int = 1,
    config: SolverConfig | None = None,
) -> EnsemblePlanner:
    config = config or SolverConfig(line_search_steps=(1.0, 0.5, 0.25, 0.1))
    return EnsemblePlanner(
        EnsembleSolver(config, perturbation, m), n_modes, sigma0, iters_per_call, first_call_iters
    )


def mpc_problem(
    system: str,
    fld: ObstacleField,
    protocol: MpcProtocol,
    barrier: BarrierParams | None = None,
    weights: dict | None = None,
) -> Problem:
    """Optimal control problem solved at every MPC call (``x0`` is replaced per call)."""
    model = _protocol_model(system, protocol)
    d = DEFAULTS[system]
    return Problem(
        model=model,
        cost=make_cost(model, fld.target, **(weights or {})),
        horizon=protocol.prediction_horizon,
        x0=start_state(model, fld.start),
        obstacles=fld.obstacles,
        barrier=barrier or d.barrier,
    )


def _protocol_model(system: str, protocol: MpcProtocol) -> DynamicsModel:
    model = make_model(system)
    return replace(model, dt=protocol.dt)


def reached_target(model: DynamicsModel, x: np.ndarray, target: np.ndarray, radius: float) -> bool:
    return bool(np.linalg.norm(model.position(x) - target) <= radius)


def run_episode(
    planner: Planner,
    problem: Problem,
    fld: ObstacleField,
    protocol: MpcProtocol,
    seed: int,
    solver_name: str = "",
) -> EpisodeRecord:
    """Closed-loop episode; stops early once the target ball is entered.

    A planner exception at some step is logged and a zero control is
    executed for that step.
    """
    model = problem.model
    x = problem.x0.copy()
    planner.reset(problem, seed)
    states = [x]
    controls = []
    times: list[float] = []
    reached = reached_target(model, x, fld.target, protocol.success_radius)
    for _ in range(protocol.total_steps):
        if reached:
            break
        t0 = time.perf_counter()
        try:
            u = np.asarray(planner.plan(problem.with_x0(x)), dtype=float)
            if not np.all(np.isfinite(u)):
                raise FloatingPointError("planner returned a non-finite control")
        except Exception as exc:  # noqa: BLE001 - a failed call must not end the episode
            log.warning("planner failed (%s); executing zero control", exc)
            u = np.zeros(model.n_u)
        times.append(max(time.perf_counter() - t0, 1e-9))
        u = model.clip(u)
        x = model.f(x, u)
        states.append(x)
        controls.append(u)
        reached = reached_target(model, x, fld.target, protocol.success_radius)

    X = np.array(states)
    U = np.array(controls).reshape(-1, model.n_u)
    max_violation = max(
        (float(np.max(constraint_violation(X, o, model))) for o in fld.obstacles), default=-np.inf
    )
    violated = max_violation > 0
    return EpisodeRecord(X, U, reached, violated, max_violation if violated else 0.0,
                         times, seed, fld.seed, solver_name)


def aggregate(records: list[EpisodeRecord]) -> dict:
    """Success rate, success-with-violation rate (both in %), mean violation and call-time stats.

    The mean violation is taken over episodes that reached the target while
    violating a constraint; it is ``nan`` when there are none.
    """
    if not records:
        raise ValueError("need at least one record")
    n = len(records)
    success = sum(r.success for r in records)
    reached = sum(r.reached for r in records)
    viol = [r.max_violation for r in records if r.reached and r.violated]
    times = np.concatenate([np.asarray(r.call_times, float) for r in records]) if any(
        r.call_times for r in records) else np.array([np.nan])
    return {
        "episodes": n,
        "success_rate": 100.0 * success / n,
        "success_with_violation_rate": 100.0 * reached / n,
        "mean_violation": float(np.mean(viol)) if viol else float("nan"),
        "call_time_mean": float(np.mean(times)),
        "call_time_std": float(np.std(times)),
    }
