"""Command-line front end: ``svto --config exp.json --output runs/exp``.

Runs a trajectory-optimization sweep (``mode: "to"``) or an MPC benchmark
(``mode: "mpc"``) and writes

- ``config.json``: the resolved config with every default filled in,
- ``results.csv``: one row per (solver, field, seed); deterministic for a
  fixed config, so wall-clock timings live in ``timings.csv`` instead,
- ``summary.csv``: per-solver aggregates,
- ``episodes/<seed>.json``: full trajectories for each seed,
- ``plots/*.svg``: convergence curves (TO) or executed paths (MPC).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from svto.benchmarks import OBSTACLE_SETS, desk_problem, make_cost, nominal_controls
from svto.config import ConfigError, ExperimentConfig, load_config, parse_config, resolve, to_json
from svto.cost import BarrierParams, Problem
from svto.ddp import SolverConfig, solve
from svto.dynamics import Arm7
from svto.meddp import MaxEntSampling, meddp_solve
from svto.mpc import (
    FieldParams,
    MpcProtocol,
    aggregate,
    generate_field,
    make_ensemble_planner,
    mpc_problem,
    run_episode,
)
from svto.mppi import MppiConfig, MppiPlanner
from svto.plotting import plot_convergence, plot_trajectories
from svto.svddp import Schedule, svddp_solve

log = logging.getLogger("svto")

RESULT_COLUMNS = (
    "mode", "system", "solver", "field_seed", "seed", "status", "final_cost", "iterations",
    "success", "reached", "violated", "max_violation", "steps", "final_distance", "params",
)
TIMING_COLUMNS = ("solver", "field_seed", "seed", "wall_time", "n_calls", "call_time_mean", "call_time_std")


# -- object construction -------------------------------------------------------

def solver_config(cfg: ExperimentConfig) -> SolverConfig:
    d = cfg.ddp
    return SolverConfig(d.max_iters, d.reg_init, d.reg_min, d.reg_max, d.reg_factor,
                        tuple(d.line_search_steps), d.convergence_tol)


def solver_params(cfg: ExperimentConfig, solver: str) -> dict:
    """Every hyperparameter that influences ``solver`` under ``cfg``."""
    p: dict = {"barrier": cfg.barrier.model_dump(), "weights": cfg.weights.model_dump()}
    if solver.endswith("mppi"):
        p["mppi"] = cfg.mppi.model_dump()
    else:
        p["ddp"] = cfg.ddp.model_dump()
        p["ensemble"] = cfg.ensemble.model_dump()
        if solver == "ddp":
            p["ensemble"]["n_modes"] = 1
        elif solver == "svddp":
            p["svddp"] = cfg.svddp.model_dump()
        else:
            p["meddp"] = cfg.meddp.model_dump()
    if cfg.mode == "mpc":
        p["protocol"] = cfg.protocol.model_dump()
        p["field"] = cfg.field.model_dump()
    else:
        p["to"] = cfg.to.model_dump()
    return p


def _weights(cfg: ExperimentConfig) -> dict:
    return {k: np.asarray(v, float) for k, v in cfg.weights.model_dump().items()}


def _barrier(cfg: ExperimentConfig) -> BarrierParams:
    return BarrierParams(cfg.barrier.mu, cfg.barrier.delta)


def to_problem(cfg: ExperimentConfig) -> Problem:
    obstacles = None if cfg.to.obstacles == "default" else OBSTACLE_SETS[cfg.to.obstacles]()
    p = desk_problem(cfg.system, cfg.to.horizon, obstacles, _barrier(cfg))
    return replace(p, cost=make_cost(p.model, p.model.position(p.cost.x_goal), **_weights(cfg)))


def protocol(cfg: ExperimentConfig) -> MpcProtocol:
    pr = cfg.protocol
    return MpcProtocol(pr.dt, pr.prediction_horizon, pr.total_steps, pr.success_radius)


def field_params(cfg: ExperimentConfig) -> FieldParams:
    from svto.mpc import FIELD_PRESETS

    f = cfg.field
    return replace(
        FIELD_PRESETS[cfg.system], n_obstacles=tuple(f.n_obstacles), radius=tuple(f.radius),
        clearance=f.clearance, margin=f.margin, corridor=f.corridor, span=tuple(f.span),
    )


def make_planner(cfg: ExperimentConfig, solver: str):
    if solver.endswith("mppi"):
        m = cfg.mppi
        mc = MppiConfig(m.n_samples, m.lam, tuple(m.sigma), m.crash_cost, m.n_modes, m.stein_step)
        return MppiPlanner(mc, solver.split("_")[0])
    e, pr = cfg.ensemble, cfg.protocol
    if solver == "ddp":
        pert, n, m = None, 1, 1
    elif solver == "svddp":
        s = cfg.svddp
        pert, n, m = _stein(cfg), e.n_modes, s.m
    else:
        pert, n, m = _sampling(cfg, solver), e.n_modes, cfg.meddp.m
    return make_ensemble_planner(pert, n, e.sigma0, m, pr.iters_per_call, pr.first_call_iters, solver_config(cfg))


def _sampling(cfg: ExperimentConfig, solver: str) -> MaxEntSampling:
    s = cfg.meddp
    return MaxEntSampling(s.alpha, solver == "mg_meddp", s.collapse_floor, s.with_feedback)


def _stein(cfg: ExperimentConfig):
    from svto.svddp import SteinPerturbation

    s = cfg.svddp
    return SteinPerturbation(s.alpha, tuple(s.epsilon_array), s.with_feedback)


# -- single jobs -------------------------------------------------------------------

def run_to_job(cfg: ExperimentConfig, solver: str, seed: int) -> dict:
    p = to_problem(cfg)
    U0 = nominal_controls(p.model, p.horizon)
    config = replace(solver_config(cfg), max_iters=cfg.to.n_iters)
    e = cfg.ensemble
    if solver == "ddp":
        res = solve(p, U0, config)
        best, trace, iters = res.trajectory, res.cost_trace, res.iterations
    else:
        if solver == "svddp":
            s = cfg.svddp
            res = svddp_solve(p, U0, config, Schedule(s.m, tuple(s.epsilon_array)), e.n_modes, seed,
                              s.alpha, e.sigma0, s.with_feedback)
        else:
            res = meddp_solve(p, U0, config, _sampling(cfg, solver), cfg.meddp.m, e.n_modes, seed, e.sigma0)
        best, trace, iters = res.best, res.cost_trace, len(res.cost_trace) - 1
    pos = p.model.position(best.states)
    return {
        "row": {
            "final_cost": best.cost,
            "iterations": iters,
            "final_distance": float(np.linalg.norm(pos[-1] - p.model.position(p.cost.x_goal))),
            "steps": p.horizon,
        },
        "episode": {"cost_trace": [float(c) for c in trace], "states": best.states.tolist(),
                    "controls": best.controls.tolist(), "final_cost": best.cost},
        "path": pos,
    }


def build_field(cfg: ExperimentConfig, field_seed: int):
    params = field_params(cfg)
    start_pos = None
    if cfg.system == "arm":
        start_pos = Arm7().forward_kinematics(np.asarray(params.start, float))
    return generate_field(field_seed, params, start_pos)


def run_mpc_job(cfg: ExperimentConfig, solver: str, field_seed: int, seed: int) -> dict:
    fld = build_field(cfg, field_seed)
    prot = protocol(cfg)
    p = mpc_problem(cfg.system, fld, prot, _barrier(cfg), _weights(cfg))
    rec = run_episode(make_planner(cfg, solver), p, fld, prot, seed, solver)
    pos = p.model.position(rec.states)
    return {
        "row": {
            "success": rec.success,
            "reached": rec.reached,
            "violated": rec.violated,
            "max_violation": rec.max_violation,
            "steps": int(rec.controls.shape[0]),
            "final_distance": float(np.linalg.norm(pos[-1] - fld.target)),
        },
        "episode": rec.to_dict() | {"field": fld.to_dict()},
        "path": pos,
        "record": rec,
    }


def _run_task(cfg_json: str, task: tuple) -> dict:
    cfg = ExperimentConfig.model_validate_json(cfg_json)
    solver, field_seed, seed = task
    t0 = time.perf_counter()
    try:
        if cfg.mode == "to":
            out = run_to_job(cfg, solver, seed)
        else:
            out = run_mpc_job(cfg, solver, field_seed, seed)
        out["status"] = "ok"
    except Exception as exc:  # noqa: BLE001 - one failed job must not end the sweep
        log.exception("job %s failed", task)
        out = {"row": {}, "episode": {"error": repr(exc)}, "path": None, "status": f"error: {exc}"}
    out["wall_time"] = time.perf_counter() - t0
    out["task"] = task
    return out


# -- sweep and output ----------------------------------------------------------------

def tasks(cfg: ExperimentConfig) -> list[tuple]:
    fields = cfg.fields if cfg.mode == "mpc" else [None]
    return [(s, f, seed) for s in cfg.solvers for f in fields for seed in cfg.seeds]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def run(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1) -> list[dict]:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(to_json(cfg), encoding="utf-8")
    todo = tasks(cfg)
    cfg_json = cfg.model_dump_json()
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, [cfg_json] * len(todo), todo))
    else:
        results = [_run_task(cfg_json, t) for t in todo]
    _write_results(cfg, out_dir, results)
    _write_episodes(cfg, out_dir, results)
    _write_summary(cfg, out_dir, results)
    _write_plots(cfg, out_dir, results)
    return results


def _write_results(cfg: ExperimentConfig, out_dir: Path, results: list[dict]) -> None:
    with open(out_dir / "results.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            solver, field_seed, seed = r["task"]
            row = {"mode": cfg.mode, "system": cfg.system, "solver": solver, "field_seed": field_seed,
                   "seed": seed, "status": r["status"],
                   "params": json.dumps(solver_params(cfg, solver), sort_keys=True)} | r["row"]
            w.writerow([_fmt(row.get(c)) for c in RESULT_COLUMNS])
    with open(out_dir / "timings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMING_COLUMNS)
        for r in results:
            solver, field_seed, seed = r["task"]
            times = r["episode"].get("call_times", [])
            w.writerow([solver, _fmt(field_seed), seed, _fmt(r["wall_time"]), len(times),
                        _fmt(float(np.mean(times)) if times else None),
                        _fmt(float(np.std(times)) if times else None)])


def _write_episodes(cfg: ExperimentConfig, out_dir: Path, results: list[dict]) -> None:
    ep_dir = out_dir / "episodes"
    ep_dir.mkdir(exist_ok=True)
    by_seed: dict[int, list] = {}
    for r in results:
        solver, field_seed, seed = r["task"]
        by_seed.setdefault(seed, []).append(
            {"solver": solver, "field_seed": field_seed, "status": r["status"]} | r["episode"])
    for seed, eps in by_seed.items():
        doc = {"seed": seed, "mode": cfg.mode, "system": cfg.system, "episodes": eps}
        (ep_dir / f"{seed}.json").write_text(json.dumps(doc), encoding="utf-8")


def _write_summary(cfg: ExperimentConfig, out_dir: Path, results: list[dict]) -> None:
    rows = []
    for solver in cfg.solvers:
        mine = [r for r in results if r["task"][0] == solver and r["status"] == "ok"]
        if not mine:
            continue
        if cfg.mode == "mpc":
            rows.append({"solver": solver} | aggregate([r["record"] for r in mine]))
        else:
            J = np.array([r["row"]["final_cost"] for r in mine])
            rows.append({"solver": solver, "runs": len(J), "final_cost_mean": float(J.mean()),
                         "final_cost_std": float(J.std()), "final_cost_min": float(J.min())})
    if not rows:
        return
    cols = list(rows[0])
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in cols])


def _plot_dims(cfg: ExperimentConfig) -> tuple[int, int]:
    return (0, 2) if cfg.system == "quadrotor" else (0, 1)


def _write_plots(cfg: ExperimentConfig, out_dir: Path, results: list[dict]) -> None:
    plot_dir = out_dir / "plots"
    plot_dir.mkdir(exist_ok=True)
    ok = [r for r in results if r["status"] == "ok"]
    dims = _plot_dims(cfg)
    if cfg.mode == "to":
        traces = {s: [r["episode"]["cost_trace"] for r in ok if r["task"][0] == s] for s in cfg.solvers}
        (plot_dir / "convergence.svg").write_text(
            plot_convergence(traces, f"{cfg.system}: best-mode cost"), encoding="utf-8")
        p = to_problem(cfg)
        paths = {s: [r["path"] for r in ok if r["task"][0] == s] for s in cfg.solvers}
        start = p.model.position(p.x0)
        target = p.model.position(p.cost.x_goal)
        (plot_dir / "trajectories.svg").write_text(
            plot_trajectories(paths, p.obstacles, start, target, dims, f"{cfg.system}: best trajectories"),
            encoding="utf-8")
        return
    for f in cfg.fields:
        fld = build_field(cfg, f)
        paths = {s: [r["path"] for r in ok if r["task"][0] == s and r["task"][1] == f] for s in cfg.solvers}
        start = ok[0]["path"][0] if ok else fld.start
        svg = plot_trajectories(paths, fld.obstacles, start, fld.target, dims, f"{cfg.system}: field {f}")
        (plot_dir / f"trajectories_field{f}.svg").write_text(svg, encoding="utf-8")


# -- entry point -----------------------------------------------------------------------

def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"seeds: cannot parse {text!r} as a comma-separated list of integers") from None
    if not seeds:
        raise ConfigError("seeds: empty list")
    return seeds


def _jobs(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("SVTO_JOBS")
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise ConfigError(f"SVTO_JOBS: expected an integer, got {env!r}") from None


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="svto", description="Run trajectory-optimization and MPC experiments.")
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--output", help="output directory (overrides output_dir in the config)")
    ap.add_argument("--seeds", help="comma-separated seeds (overrides the config)")
    ap.add_argument("--jobs", type=int, help="parallel worker processes (default: $SVTO_JOBS or 1)")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seeds is not None:
            cfg = parse_config(cfg.model_dump() | {"seeds": _parse_seeds(args.seeds)})
        cfg = resolve(cfg)
        out = args.output or cfg.output_dir
        if not out:
            raise ConfigError("output_dir: no output directory (set output_dir or pass --output)")
        jobs = _jobs(args.jobs)
        if jobs < 1:
            raise ConfigError("jobs: must be at least 1")
    except ConfigError as err:
        print(f"svto: {err}", file=sys.stderr)
        return 2
    results = run(cfg, Path(out), jobs)
    failed = sum(r["status"] != "ok" for r in results)
    print(f"svto: {len(results)} runs, {failed} failed; results in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
