from __future__ import annotations

import numpy as np
import pytest

from svto.cost import Obstacle
from svto.meddp import MaxEntSampling
from svto.mpc import (
    FIELD_PRESETS,
    PROTOCOLS,
    EpisodeRecord,
    FieldParams,
    MpcProtocol,
    ObstacleField,
    aggregate,
    generate_field,
    make_ensemble_planner,
    mpc_problem,
    run_episode,
)
from svto.svddp import SteinPerturbation


def _fields_equal(a: ObstacleField, b: ObstacleField) -> bool:
    return a.to_dict() == b.to_dict()


@pytest.mark.parametrize("system", ["car", "quadrotor"])
def test_field_is_reproducible(system):
    assert _fields_equal(generate_field(7, FIELD_PRESETS[system]), generate_field(7, FIELD_PRESETS[system]))
    assert not _fields_equal(generate_field(7, FIELD_PRESETS[system]), generate_field(8, FIELD_PRESETS[system]))


def test_zero_obstacles():
    assert generate_field(0, FieldParams(n_obstacles=(0, 0))).obstacles == ()


@pytest.mark.parametrize("corridor", [None, 1.0])
def test_field_clearance(corridor):
    params = FieldParams(corridor=corridor)
    for seed in range(30):
        fld = generate_field(seed, params)
        for o in fld.obstacles:
            for p in (fld.start, fld.target):
                assert np.linalg.norm(p - o.center) - o.radius >= params.clearance
            assert params.radius[0] <= o.radius <= params.radius[1]


def test_cylinder_fields_lie_in_plane():
    fld = generate_field(1, FIELD_PRESETS["quadrotor"])
    assert all(o.axis == 1 and o.center[1] == 0.0 for o in fld.obstacles)


def test_field_params_validation():
    with pytest.raises(ValueError):
        FieldParams(n_obstacles=(3, 1))
    with pytest.raises(ValueError):
        FieldParams(radius=(0.0, 1.0))
    with pytest.raises(ValueError):
        MpcProtocol(dt=0.0)


def _empty_field(target=(5.0, 5.0)):
    return ObstacleField((), np.zeros(2), np.asarray(target, float), 0)


def test_target_at_start_succeeds_immediately():
    fld = _empty_field((0.0, 0.0))
    prot = PROTOCOLS["car"]
    rec = run_episode(make_ensemble_planner(None, 1, 0.5), mpc_problem("car", fld, prot), fld, prot, 0)
    assert rec.success and rec.controls.shape == (0, 2) and rec.call_times == []


def test_empty_field_ddp_reaches_target():
    fld = _empty_field()
    prot = PROTOCOLS["car"]
    p = mpc_problem("car", fld, prot)
    rec = run_episode(make_ensemble_planner(None, 1, 0.5, iters_per_call=2, first_call_iters=30), p, fld, prot, 0)
    assert rec.success
    assert rec.controls.shape[0] <= prot.total_steps
    assert np.linalg.norm(rec.states[-1, :2] - fld.target) <= prot.success_radius
    # The executed trajectory re-propagates exactly through the true dynamics.
    np.testing.assert_array_equal(rec.states[1:], np.array(
        [p.model.f(x, u) for x, u in zip(rec.states[:-1], rec.controls)]))
    assert all(t > 0 for t in rec.call_times)


@pytest.mark.parametrize("perturbation", [MaxEntSampling(0.05, multimodal=True), SteinPerturbation(0.05)])
def test_seeded_episode_is_deterministic(perturbation):
    fld = generate_field(2, FIELD_PRESETS["car"])
    prot = MpcProtocol(0.02, 30, 20)
    p = mpc_problem("car", fld, prot)
    a = run_episode(make_ensemble_planner(perturbation, 4, 0.5), p, fld, prot, 5)
    b = run_episode(make_ensemble_planner(perturbation, 4, 0.5), p, fld, prot, 5)
    np.testing.assert_array_equal(a.states, b.states)
    assert (a.success, a.violated, a.max_violation) == (b.success, b.violated, b.max_violation)


def test_violation_is_recorded():
    fld = ObstacleField((Obstacle(np.array([0.3, 0.3]), 0.2),), np.zeros(2), np.array([5.0, 5.0]), 0)
    prot = MpcProtocol(0.02, 10, 30)

    class Straight:
        def reset(self, problem, seed):
            pass

        def plan(self, problem):
            return np.array([3.0, 0.0])

    rec = run_episode(Straight(), mpc_problem("car", fld, prot), fld, prot, 0)
    assert rec.violated and rec.max_violation > 0 and not rec.success


def test_planner_failure_executes_zero_control():
    fld = _empty_field()
    prot = MpcProtocol(0.02, 10, 3)

    class Broken:
        def reset(self, problem, seed):
            pass

        def plan(self, problem):
            raise RuntimeError("boom")

    rec = run_episode(Broken(), mpc_problem("car", fld, prot), fld, prot, 0)
    np.testing.assert_array_equal(rec.controls, np.zeros((3, 2)))
    assert not rec.reached


def _record(reached, violated, viol=0.0, times=(0.1,)):
    return EpisodeRecord(np.zeros((1, 3)), np.zeros((0, 2)), reached, violated, viol, list(times))


def test_aggregate_tallies():
    assert aggregate([_record(True, False)] * 10)["success_rate"] == 100.0
    recs = [
        _record(True, False, times=(0.1, 0.3)),
        _record(True, True, 0.2, times=(0.2,)),
        _record(True, True, 0.4, times=(0.4,)),
        _record(False, True, 0.9, times=(0.5,)),
        _record(False, False, times=(0.6,)),
    ]
    agg = aggregate(recs)
    assert agg["episodes"] == 5
    assert agg["success_rate"] == pytest.approx(20.0)
    assert agg["success_with_violation_rate"] == pytest.approx(60.0)
    assert agg["mean_violation"] == pytest.approx(0.3)
    times = [0.1, 0.3, 0.2, 0.4, 0.5, 0.6]
    assert agg["call_time_mean"] == pytest.approx(np.mean(times))
    assert agg["call_time_std"] == pytest.approx(np.std(times))
    with pytest.raises(ValueError):
        aggregate([])


def test_record_serializes():
    rec = _record(True, False)
    d = rec.to_dict()
    assert d["success"] is True and d["steps"] == 0
