from __future__ import annotations

import csv
import json
import re

import numpy as np
import pytest

from svto.cli import RESULT_COLUMNS, main, solver_params
from svto.config import ConfigError, parse_config, resolve, to_json
from svto.cost import Obstacle
from svto.plotting import plot_convergence, plot_trajectories

MINIMAL = {
    "mode": "mpc",
    "system": "car",
    "solvers": ["ddp"],
    "seeds": [0],
    "fields": [0],
    "field": {"n_obstacles": [0, 0]},
    "protocol": {"total_steps": 15, "prediction_horizon": 20, "first_call_iters": 5},
}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_minimal_config_runs(tmp_path):
    out = tmp_path / "out"
    assert main(["--config", str(_write(tmp_path, MINIMAL)), "--output", str(out)]) == 0
    rows = _rows(out / "results.csv")
    assert len(rows) == 1 and rows[0]["status"] == "ok"
    assert (out / "episodes" / "0.json").exists()
    assert (out / "plots" / "trajectories_field0.svg").exists()
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["barrier"]["mu"] is not None and resolved["ensemble"]["sigma0"] is not None


def test_misspelled_key_is_named(tmp_path, capsys):
    bad = MINIMAL | {"svdpp": {"alpha": 1.0}}
    assert main(["--config", str(_write(tmp_path, bad)), "--output", str(tmp_path / "o")]) != 0
    assert "svdpp" in capsys.readouterr().err


def test_nested_unknown_key_is_named(tmp_path, capsys):
    bad = MINIMAL | {"svddp": {"epsilon": [1.0, 0.0]}}
    assert main(["--config", str(_write(tmp_path, bad)), "--output", str(tmp_path / "o")]) != 0
    assert "svddp.epsilon" in capsys.readouterr().err


@pytest.mark.parametrize("bad", [
    {"mode": "plan"},
    {"solvers": ["svgd"]},
    {"svddp": {"epsilon_array": [1.0, 2.0, 0.0]}},
    {"ensemble": {"n_modes": 0}},
])
def test_invalid_values_rejected(bad):
    with pytest.raises(ConfigError):
        parse_config(MINIMAL | bad)


def test_mppi_rejected_in_to_mode():
    with pytest.raises(ConfigError, match="solvers"):
        resolve(parse_config({"mode": "to", "solvers": ["ug_mppi"]}))


def test_missing_file_and_output(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "nope.json"), "--output", str(tmp_path)]) == 2
    assert main(["--config", str(_write(tmp_path, MINIMAL))]) == 2
    assert "output" in capsys.readouterr().err


def test_rerun_is_byte_identical(tmp_path):
    cfg = MINIMAL | {"solvers": ["ddp", "svddp", "mg_meddp", "sv_mppi"], "seeds": [0, 1],
                     "mppi": {"n_samples": 32}, "field": {"n_obstacles": [2, 3]}}
    path = _write(tmp_path, cfg)
    main(["--config", str(path), "--output", str(tmp_path / "a")])
    main(["--config", str(path), "--output", str(tmp_path / "b"), "--jobs", "2"])
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    assert len(_rows(tmp_path / "a" / "results.csv")) == 8


def test_header_and_params_round_trip(tmp_path):
    out = tmp_path / "out"
    main(["--config", str(_write(tmp_path, MINIMAL | {"solvers": ["svddp"]})), "--output", str(out)])
    with open(out / "results.csv", encoding="utf-8") as fh:
        assert next(csv.reader(fh)) == list(RESULT_COLUMNS)
    row = _rows(out / "results.csv")[0]
    cfg = resolve(parse_config(MINIMAL | {"solvers": ["svddp"]}))
    assert json.loads(row["params"]) == json.loads(json.dumps(solver_params(cfg, "svddp")))


def test_seeds_flag_and_env_jobs(tmp_path, monkeypatch):
    monkeypatch.setenv("SVTO_JOBS", "1")
    out = tmp_path / "out"
    assert main(["--config", str(_write(tmp_path, MINIMAL)), "--output", str(out), "--seeds", "3,4"]) == 0
    assert [r["seed"] for r in _rows(out / "results.csv")] == ["3", "4"]
    assert main(["--config", str(_write(tmp_path, MINIMAL)), "--output", str(out), "--seeds", "x"]) == 2
    monkeypatch.setenv("SVTO_JOBS", "many")
    assert main(["--config", str(_write(tmp_path, MINIMAL)), "--output", str(out)]) == 2


def test_to_mode(tmp_path):
    cfg = {"mode": "to", "solvers": ["ddp", "ug_meddp", "svddp"], "seeds": [0],
           "to": {"horizon": 40, "n_iters": 5}, "ensemble": {"n_modes": 3}}
    out = tmp_path / "out"
    assert main(["--config", str(_write(tmp_path, cfg)), "--output", str(out)]) == 0
    rows = _rows(out / "results.csv")
    assert [r["solver"] for r in rows] == ["ddp", "ug_meddp", "svddp"]
    assert all(np.isfinite(float(r["final_cost"])) for r in rows)
    svg = (out / "plots" / "convergence.svg").read_text()
    assert svg.count('class="series"') == 3


def test_resolved_config_round_trips():
    cfg = resolve(parse_config(MINIMAL))
    again = resolve(parse_config(json.loads(to_json(cfg))))
    assert again == cfg


def _svg_ranges(svg):
    x = [float(v) for v in re.search(r'data-xrange="([^"]+)"', svg).group(1).split()]
    y = [float(v) for v in re.search(r'data-yrange="([^"]+)"', svg).group(1).split()]
    return x, y


def _polyline_points(svg):
    out = []
    for pts in re.findall(r'<polyline[^>]*points="([^"]*)"', svg):
        out.append(np.array([[float(c) for c in p.split(",")] for p in pts.split()]))
    return out


def test_convergence_plot_structure():
    svg = plot_convergence({"ddp": [[5.0] * 4]})
    (line,) = _polyline_points(svg)
    assert np.all(line[:, 1] == line[0, 1])
    svg = plot_convergence({"a": [[3.0, 2.0, 1.0]], "b": [[4.0, 0.5, 0.2], [2.0, 1.5, 0.0]]})
    assert svg.count('class="series"') == 2
    x, y = _svg_ranges(svg)
    assert x[0] <= 0 and x[1] >= 2 and y[0] <= 0.1 and y[1] >= 3.0
    assert "<svg" in plot_convergence({"empty": [[]]})


def test_trajectory_plot_structure():
    paths = {"a": [np.array([[0, 0], [1, 1], [2, 2]]), np.array([[0, 0], [1, 0]])], "b": [np.zeros((2, 2))]}
    svg = plot_trajectories(paths, [Obstacle(np.array([1.0, 0.5]), 0.2)], np.zeros(2), np.array([2.0, 2.0]))
    assert svg.count('class="path"') == 3
    assert svg.count('class="terminal"') == 3
    assert svg.count('class="obstacle"') == 1
    assert 'class="start"' in svg and 'class="target"' in svg
    x, y = _svg_ranges(svg)
    assert x[0] <= 0 and x[1] >= 2 and y[0] <= 0 and y[1] >= 2
