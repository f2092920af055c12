"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdicts are printed in
the "acceptance criteria" section of the terminal summary.  The closed-loop
benchmark (criteria 7 and 8) takes roughly a quarter of an hour on one core.
"""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import VERDICTS
from oracles import batched_fd_jacobians, random_lq, random_points, riccati
from svto.benchmarks import DEFAULTS, desk_problem, make_cost, nominal_controls, start_state
from svto.cli import make_planner, run_mpc_job, run_to_job
from svto.config import parse_config, resolve
from svto.cost import BarrierParams, Obstacle, Problem, barrier_derivatives, cost_derivatives, relaxed_barrier
from svto.cost import trajectory_costs
from svto.ddp import SolverConfig, backward_pass, forward_pass, initial_trajectory, solve
from svto.dynamics import make_model
from svto.ensemble import EnsembleSolver, solve_ensemble
from svto.meddp import MaxEntSampling, UnimodalPolicy, draw_samples, meddp_solve, mode_weights
from svto.mpc import FIELD_PRESETS, PROTOCOLS, generate_field, mpc_problem, run_episode
from svto.mppi import MppiConfig, MppiPlanner
from svto.svddp import Schedule, SteinPerturbation, sv_line_search, svddp_solve

MODELS = ("car", "quadrotor", "arm")
N_FIELDS = 10
N_EPISODES = 10


def verdict(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


# -- 1: Riccati equivalence ---------------------------------------------------------

def test_01_riccati_equivalence():
    warm = random_lq(np.random.default_rng(99), 2, 1, 5)
    backward_pass(warm, initial_trajectory(warm, np.zeros((5, 1))))
    rng = np.random.default_rng(2024)
    err_K = err_k = err_J = 0.0
    t0 = time.perf_counter()
    for _ in range(5):
        n_x, n_u, T = int(rng.integers(1, 7)), int(rng.integers(1, 4)), int(rng.integers(2, 51))
        p = random_lq(rng, n_x, n_u, T)
        k, K, _, _, J = riccati(p)
        traj = initial_trajectory(p, np.zeros((T, n_u)))
        _, gains, _ = backward_pass(p, traj)
        # Gains act on state deviations; at a zero nominal the absolute offset is kappa - K x_bar.
        k_abs = gains.kappa - np.einsum("tij,tj->ti", gains.K, traj.states[:-1])
        J_ddp = forward_pass(p, traj, gains, 1.0).cost
        err_K = max(err_K, np.abs(gains.K - K).max())
        err_k = max(err_k, np.abs(k_abs - k).max())
        err_J = max(err_J, abs(J_ddp - J) / max(1.0, abs(J)))
    elapsed = time.perf_counter() - t0
    ok = max(err_K, err_k, err_J) < 1e-8 and elapsed < 1.0
    verdict(1, ok, f"max |dK|={err_K:.1e} |dk|={err_k:.1e} rel dJ={err_J:.1e}, {elapsed:.3f}s")


# -- 2: Jacobians and barrier gradients vs finite differences -------------------------

def _rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def _barrier_problem(name: str, rng):
    model = make_model(name)
    d = DEFAULTS[name]
    n_pos = len(model.position_indices)
    obstacles = tuple(
        Obstacle(rng.uniform(0.0, 5.0, n_pos) if name != "arm" else rng.uniform(-0.8, 0.8, n_pos),
                 float(rng.uniform(0.3, 1.0)), margin=0.05)
        for _ in range(3)
    )
    cost = make_cost(model, d.target)
    return Problem(model, cost, 1, np.zeros(model.n_x), obstacles, d.barrier, control_bounds=True)


def test_02_jacobians_and_barrier_gradients():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = {}
    for name in MODELS:
        model = make_model(name)
        X, U = random_points(name, rng, 1000)
        fx, fu = model.jacobians(X, U)
        fd_x, fd_u = batched_fd_jacobians(model, X, U, h=1e-6)
        jac = max(_rel_err(fx, fd_x), _rel_err(fu, fd_u))

        p = _barrier_problem(name, rng)
        # Place positions near the obstacles so both barrier branches are exercised.
        X, U = random_points(name, rng, 1000)
        pos = list(model.position_indices)
        which = rng.integers(0, len(p.obstacles), 1000)
        centers = np.array([p.obstacles[i].center for i in which])
        radii = np.array([p.obstacles[i].radius for i in which])
        direction = rng.standard_normal((1000, len(pos)))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        X[:, pos] = centers + direction * (radii * rng.uniform(0.7, 1.6, 1000))[:, None]
        Xt = np.stack([X, X], axis=1)
        Ut = U[:, None]
        d = cost_derivatives(p, Xt, Ut)
        h = 1e-6
        fd = np.empty_like(X)
        for i in range(model.n_x):
            e = np.zeros(model.n_x)
            e[i] = h
            Xp, Xm = Xt.copy(), Xt.copy()
            Xp[:, 0] += e
            Xm[:, 0] += -e
            fd[:, i] = (trajectory_costs(p, Xp, Ut) - trajectory_costs(p, Xm, Ut)) / (2 * h)
        fd_u = np.empty_like(U)
        for i in range(model.n_u):
            e = np.zeros(model.n_u)
            e[i] = h
            fd_u[:, i] = (trajectory_costs(p, Xt, (U + e)[:, None]) - trajectory_costs(p, Xt, (U - e)[:, None])) / (2 * h)
        bar = max(_rel_err(d.l_x[:, 0], fd), _rel_err(d.l_u[:, 0], fd_u))
        worst[name] = (jac, bar)
    elapsed = time.perf_counter() - t0
    ok = all(max(v) < 1e-4 for v in worst.values()) and elapsed < 10.0
    detail = ", ".join(f"{k}: jac {a:.1e} barrier {b:.1e}" for k, (a, b) in worst.items())
    verdict(2, ok, f"{detail}; {elapsed:.2f}s")


# -- 3: barrier continuity ------------------------------------------------------------

def test_03_barrier_continuity():
    rng = np.random.default_rng(3)
    worst_v = worst_d = 0.0
    for _ in range(100):
        mu = float(10 ** rng.uniform(-3, 1))
        delta = float(10 ** rng.uniform(-4, 0))
        p = BarrierParams(mu, delta)
        g_log = -delta
        g_quad = np.nextafter(-delta, 0.0)
        v_log, v_quad = relaxed_barrier(g_log, p), relaxed_barrier(g_quad, p)
        d_log = barrier_derivatives(g_log, np.ones(1), None, p)[0][0]
        d_quad = barrier_derivatives(g_quad, np.ones(1), None, p)[0][0]
        worst_v = max(worst_v, abs(v_log - v_quad) / max(1.0, abs(v_log)))
        worst_d = max(worst_d, abs(d_log - d_quad) / max(1.0, abs(d_log)))
    verdict(3, max(worst_v, worst_d) < 1e-10, f"value gap {worst_v:.1e}, slope gap {worst_d:.1e}")


# -- 4: degenerate settings -------------------------------------------------------------

def _mppi_episode(variant: str, n_modes: int):
    fld = generate_field(1, FIELD_PRESETS["car"])
    prot = replace(PROTOCOLS["car"], total_steps=40)
    p = mpc_problem("car", fld, prot)
    planner = MppiPlanner(MppiConfig(n_samples=256, n_modes=n_modes), variant)
    return run_episode(planner, p, fld, prot, seed=5).controls


def test_04_degeneracies():
    p = desk_problem("car")
    U0 = nominal_controls(p.model, p.horizon)
    # Ensembles always run their full budget; a zero tolerance makes plain DDP do the same.
    cfg = SolverConfig(max_iters=40, convergence_tol=0.0)
    ddp = solve(p, U0, cfg)
    sv = svddp_solve(p, U0, cfg, Schedule(1), n_modes=1, seed=11)
    checks = {
        "svddp N=1 == ddp": np.array_equal(sv.best.controls, ddp.trajectory.controls)
        and sv.cost_trace == ddp.cost_trace and ddp.iterations == 40,
    }
    ug = meddp_solve(p, U0, cfg, MaxEntSampling(30.0), m=1, n_modes=1, seed=11)
    mg = meddp_solve(p, U0, cfg, MaxEntSampling(30.0, multimodal=True), m=1, n_modes=1, seed=11)
    checks["mg-meddp 1 mode == ug-meddp"] = (np.array_equal(ug.best.controls, mg.best.controls)
                                             and ug.cost_trace == mg.cost_trace)
    u_ug = _mppi_episode("ug", 1)
    checks["sv-mppi 1 particle == ug-mppi"] = np.array_equal(_mppi_episode("sv", 1), u_ug)
    checks["mg-mppi 1 mode == ug-mppi"] = np.array_equal(_mppi_episode("mg", 1), u_ug)
    verdict(4, all(checks.values()), ", ".join(f"{k}: {v}" for k, v in checks.items()))


# -- 5: monotone best-mode cost ---------------------------------------------------------

def _seeded_problem(seed: int) -> Problem:
    fld = generate_field(seed, FIELD_PRESETS["car"])
    model = make_model("car")
    return Problem(model, make_cost(model, fld.target), 60, start_state(model, fld.start),
                   fld.obstacles, DEFAULTS["car"].barrier)


def test_05_monotone_best_cost():
    cfg = SolverConfig(max_iters=15)
    bad = []
    for seed in range(50):
        p = _seeded_problem(seed)
        U0 = nominal_controls(p.model, p.horizon)
        traces = {
            "ddp": solve(p, U0, cfg).cost_trace,
            "ug": meddp_solve(p, U0, cfg, MaxEntSampling(30.0), m=3, n_modes=4, seed=seed).cost_trace,
            "mg": meddp_solve(p, U0, cfg, MaxEntSampling(30.0, multimodal=True), m=3, n_modes=4,
                              seed=seed).cost_trace,
            "sv": svddp_solve(p, U0, cfg, Schedule(3), n_modes=4, seed=seed).cost_trace,
            "ms": solve_ensemble(p, U0, 4, EnsembleSolver(cfg), seed=seed).cost_trace,
        }
        bad += [f"{k}@{seed}" for k, tr in traces.items() if np.any(np.diff(tr) > 0)]
    verdict(5, not bad, "all 250 traces non-increasing" if not bad else f"increases in {bad[:5]}")


# -- 6: mode weights and policy covariance -------------------------------------------------

def test_06_weights_and_policy_covariance():
    rng = np.random.default_rng(6)
    ok_w = True
    for _ in range(200):
        v = rng.normal(0, 100, int(rng.integers(1, 12)))
        alpha = float(10 ** rng.uniform(-2, 2))
        w = mode_weights(v, alpha)
        ok_w &= abs(w.sum() - 1.0) < 1e-12
        ok_w &= np.allclose(mode_weights(v + rng.normal(0, 1e3), alpha), w, atol=1e-12)
        ok_w &= int(np.argmax(w)) == int(np.argmin(v))
    p = desk_problem("car", horizon=5)
    alpha = 0.2
    traj = initial_trajectory(p, np.full((5, 2), 0.5))
    quad, gains, _ = backward_pass(p, traj)
    pol = UnimodalPolicy.from_backward(traj, gains, quad, alpha)
    rngs = [np.random.default_rng([6, j]) for j in range(10_000)]
    _, us, _ = draw_samples(p, [pol], [0] * len(rngs), rngs, with_feedback=False)
    du = us[:, 0] - pol.controls[0] - pol.kappa[0]
    target = alpha * np.linalg.inv(quad.Q_uu[0])
    rel = np.linalg.norm(np.cov(du.T) - target) / np.linalg.norm(target)
    verdict(6, bool(ok_w) and rel < 0.05, f"weight properties {'hold' if ok_w else 'violated'}, "
            f"covariance rel. Frobenius error {rel:.3f}")


# -- 7, 8: closed-loop car benchmark -------------------------------------------------------

@pytest.fixture(scope="module")
def car_benchmark():
    cfg = resolve(parse_config({"mode": "mpc", "system": "car"}))
    no_fb = cfg.model_copy(update={"svddp": cfg.svddp.model_copy(update={"with_feedback": False})})
    runs = {"ddp": (cfg, "ddp"), "ug": (cfg, "ug_meddp"), "mg": (cfg, "mg_meddp"),
            "sv": (cfg, "svddp"), "sv_nofb": (no_fb, "svddp")}
    success, elapsed = {}, {}
    for key, (c, solver) in runs.items():
        t0 = time.perf_counter()
        success[key] = [run_mpc_job(c, solver, f, s)["row"]["success"]
                        for f in range(N_FIELDS) for s in range(N_EPISODES)]
        elapsed[key] = time.perf_counter() - t0
    return success, elapsed


def _rate(flags) -> float:
    return 100.0 * float(np.mean(flags))


def test_07_car_success_ordering(car_benchmark):
    success, elapsed = car_benchmark
    r = {k: _rate(v) for k, v in success.items()}
    minutes = sum(elapsed[k] for k in ("ddp", "ug", "mg", "sv")) / 60
    ok = (r["sv"] >= max(r["ug"], r["mg"]) > r["ddp"] and r["sv"] - r["ddp"] >= 30 and minutes < 30)
    verdict(7, ok, f"success % ddp {r['ddp']:.0f}, ug {r['ug']:.0f}, mg {r['mg']:.0f}, "
            f"sv {r['sv']:.0f}; {minutes:.1f} min")


def test_08_feedback_ablation(car_benchmark):
    success, _ = car_benchmark
    with_fb, without = _rate(success["sv"]), _rate(success["sv_nofb"])
    verdict(8, with_fb > without, f"svddp success with feedback {with_fb:.0f}%, without {without:.0f}% "
            f"({len(success['sv'])} runs each)")


# -- 9: more modes give more consistent optima ---------------------------------------------

def test_09_mode_count_consistency():
    out = {}
    for solver in ("ug_meddp", "mg_meddp", "svddp"):
        for n in (8, 64):
            cfg = resolve(parse_config({"mode": "to", "system": "car", "ensemble": {"n_modes": n}}))
            costs = [run_to_job(cfg, solver, seed)["row"]["final_cost"] for seed in range(15)]
            out[solver, n] = float(np.std(costs))
    ok = all(out[s, 64] < out[s, 8] for s in ("ug_meddp", "mg_meddp", "svddp"))
    detail = ", ".join(f"{s}: std {out[s, 8]:.1f} (8) -> {out[s, 64]:.1f} (64)"
                       for s in ("ug_meddp", "mg_meddp", "svddp"))
    verdict(9, ok, detail)


# -- 10: zero step array and step-search fuzz --------------------------------------------------

def test_10_zero_epsilon_and_step_fuzz():
    p = desk_problem("car")
    U0 = nominal_controls(p.model, p.horizon)
    cfg = SolverConfig(max_iters=20)
    sv = svddp_solve(p, U0, cfg, Schedule(2, (0.0, 0.0)), n_modes=6, seed=4)
    ms = solve_ensemble(p, U0, 6, EnsembleSolver(cfg), seed=4)
    same = sv.cost_trace == ms.cost_trace and np.array_equal(sv.ensemble.controls, ms.ensemble.controls)

    traj = solve(p, U0, SolverConfig(max_iters=3)).trajectory
    _, gains, _ = backward_pass(p, traj)
    rng = np.random.default_rng(10)
    finite = 0
    for i in range(1000):
        scale = 10 ** rng.uniform(-3, 300)
        w = scale * rng.standard_normal(traj.controls.shape)
        if i % 10 == 0:
            w.flat[rng.integers(w.size)] = rng.choice([np.inf, -np.inf, np.nan])
        out = sv_line_search(p, traj, gains, w, (4.0, 3.0, 2.0, 1.0, 0.5, 0.0), with_feedback=bool(i % 2))
        finite += bool(np.isfinite(out.cost))
    verdict(10, same and finite == 1000, f"zero-step svddp equals multistart: {same}; "
            f"finite costs {finite}/1000")


# -- 11: MPC call latency --------------------------------------------------------------

def test_11_mpc_call_latency():
    cfg = resolve(parse_config({"mode": "mpc", "system": "car", "ensemble": {"n_modes": 8},
                                "protocol": {"prediction_horizon": 60}}))
    fld = generate_field(0, FIELD_PRESETS["car"])
    prot = PROTOCOLS["car"]
    p = mpc_problem("car", fld, prot)
    run_episode(make_planner(cfg, "svddp"), p, fld, replace(prot, total_steps=3), seed=0)  # JIT warm-up
    rec = run_episode(make_planner(cfg, "svddp"), p, fld, prot, seed=1)
    worst = max(rec.call_times)
    verdict(11, worst < 0.5, f"max call {worst * 1000:.0f} ms, mean {np.mean(rec.call_times) * 1000:.1f} ms "
            f"over {len(rec.call_times)} calls (first call runs the warm-start iterations)")
