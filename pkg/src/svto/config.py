"""Experiment configuration: a strict JSON schema with per-system defaults.

Unknown keys are rejected anywhere in the document.  Fields left out (or
set to ``null``) take the system's default, and :func:`resolve` writes
every default back so the stored config fully describes the run.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from svto.benchmarks import DEFAULTS
from svto.mpc import FIELD_PRESETS, PROTOCOLS

SOLVERS = ("ddp", "ug_meddp", "mg_meddp", "svddp", "ug_mppi", "mg_mppi", "sv_mppi")
MPPI_SOLVERS = ("ug_mppi", "mg_mppi", "sv_mppi")
SolverName = Literal["ddp", "ug_meddp", "mg_meddp", "svddp", "ug_mppi", "mg_mppi", "sv_mppi"]
System = Literal["car", "quadrotor", "arm"]


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DdpSection(_Section):
    max_iters: int = Field(100, ge=0)
    reg_init: float = 0.0
    reg_min: float = 1e-9
    reg_max: float = 1e6
    reg_factor: float = Field(10.0, gt=1)
    line_search_steps: list[float] | None = None
    convergence_tol: float = 1e-6


class EnsembleSection(_Section):
    n_modes: int = Field(8, ge=1)
    sigma0: float | None = Field(None, gt=0)


class MeddpSection(_Section):
    alpha: float | None = Field(None, gt=0)
    m: int | None = Field(None, ge=1)
    collapse_floor: float = Field(0.02, ge=0)
    with_feedback: bool = True


class SvddpSection(_Section):
    alpha: float | None = Field(None, gt=0)
    m: int | None = Field(None, ge=1)
    epsilon_array: list[float] = [4.0, 3.0, 2.0, 1.0, 0.5, 0.0]
    with_feedback: bool = True

    @field_validator("epsilon_array")
    @classmethod
    def _eps(cls, v: list[float]) -> list[float]:
        if not v or v[-1] != 0 or any(e < 0 for e in v) or any(b > a for a, b in zip(v, v[1:])):
            raise ValueError("must be nonnegative, non-increasing and end with 0")
        return v


class BarrierSection(_Section):
    mu: float | None = Field(None, gt=0)
    delta: float | None = Field(None, gt=0)


class WeightsSection(_Section):
    P: list[float] | None = None
    R: list[float] | None = None
    Qf: list[float] | None = None


class MppiSection(_Section):
    n_samples: int = Field(2048, ge=1)
    lam: float = Field(1.0, gt=0)
    sigma: list[float] | None = None
    crash_cost: float = Field(1e4, ge=0)
    n_modes: int = Field(8, ge=1)
    stein_step: float = Field(1.0, ge=0)


class ProtocolSection(_Section):
    dt: float | None = Field(None, gt=0)
    prediction_horizon: int | None = Field(None, ge=1)
    total_steps: int | None = Field(None, ge=1)
    success_radius: float | None = Field(None, gt=0)
    iters_per_call: int | None = Field(None, ge=1)
    first_call_iters: int | None = Field(None, ge=1)


class FieldSection(_Section):
    n_obstacles: tuple[int, int] | None = None
    radius: tuple[float, float] | None = None
    clearance: float | None = Field(None, ge=0)
    margin: float | None = Field(None, ge=0)
    corridor: float | None = Field(None, gt=0)
    span: tuple[float, float] | None = None


class ToSection(_Section):
    horizon: int | None = Field(None, ge=1)
    n_iters: int | None = Field(None, ge=0)
    obstacles: Literal["default", "gap", "clutter", "none"] = "default"


class ExperimentConfig(_Section):
    mode: Literal["to", "mpc"]
    system: System = "car"
    solvers: list[SolverName] = Field(default_factory=lambda: ["svddp"], min_length=1)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    fields: list[int] = Field(default_factory=lambda: [0], min_length=1)
    output_dir: str | None = None
    ddp: DdpSection = DdpSection()
    ensemble: EnsembleSection = EnsembleSection()
    meddp: MeddpSection = MeddpSection()
    svddp: SvddpSection = SvddpSection()
    barrier: BarrierSection = BarrierSection()
    weights: WeightsSection = WeightsSection()
    mppi: MppiSection = MppiSection()
    protocol: ProtocolSection = ProtocolSection()
    field: FieldSection = FieldSection()
    to: ToSection = ToSection()


# Defaults that depend on the mode as well as the system.  Temperatures are
# in cost units, so they follow the scale of each system's cost.
MODE_DEFAULTS = {
    ("to", "car"): {"alpha": 30.0, "m": 10, "n_iters": 300},
    ("to", "quadrotor"): {"alpha": 1.0, "m": 5, "n_iters": 100},
    ("to", "arm"): {"alpha": 0.1, "m": 5, "n_iters": 100},
    ("mpc", "car"): {"alpha": 0.05, "m": 1, "iters_per_call": 2, "first_call_iters": 30},
    ("mpc", "quadrotor"): {"alpha": 0.05, "m": 1, "iters_per_call": 2, "first_call_iters": 30},
    ("mpc", "arm"): {"alpha": 0.01, "m": 1, "iters_per_call": 2, "first_call_iters": 30},
}
MPPI_SIGMA = {"car": [1.0], "quadrotor": [1.0], "arm": [2.0]}
TO_HORIZON = {"car": 100, "quadrotor": 150, "arm": 100}


def _format_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        key = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{key}: {e['msg']}")
    return "invalid config: " + "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_error(err)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(data)


def _fill(section: BaseModel, values: dict) -> BaseModel:
    updates = {k: v for k, v in values.items() if getattr(section, k) is None}
    return section.model_copy(update=updates)


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Replace every ``None`` by the mode/system default.

    Raises:
        ConfigError: if MPPI solvers are requested in trajectory-optimization mode.
    """
    if cfg.mode == "to" and any(s in MPPI_SOLVERS for s in cfg.solvers):
        raise ConfigError("solvers: MPPI solvers only run in mpc mode")
    sd = DEFAULTS[cfg.system]
    md = MODE_DEFAULTS[(cfg.mode, cfg.system)]
    proto = PROTOCOLS[cfg.system]
    preset = FIELD_PRESETS[cfg.system]
    out = cfg.model_copy(deep=True)
    out.ddp = _fill(out.ddp, {"line_search_steps": [0.5**k for k in range(11)] if cfg.mode == "to"
                              else [1.0, 0.5, 0.25, 0.1]})
    out.ensemble = _fill(out.ensemble, {"sigma0": sd.sigma0})
    out.meddp = _fill(out.meddp, {"alpha": md["alpha"], "m": md["m"]})
    out.svddp = _fill(out.svddp, {"alpha": md["alpha"], "m": md["m"]})
    out.barrier = _fill(out.barrier, {"mu": sd.barrier.mu, "delta": sd.barrier.delta})
    out.weights = _fill(out.weights, {"P": list(sd.P), "R": list(sd.R), "Qf": list(sd.Qf)})
    out.mppi = _fill(out.mppi, {"sigma": MPPI_SIGMA[cfg.system]})
    out.protocol = _fill(out.protocol, {
        "dt": proto.dt,
        "prediction_horizon": proto.prediction_horizon,
        "total_steps": proto.total_steps,
        "success_radius": proto.success_radius,
        "iters_per_call": md.get("iters_per_call", 1),
        "first_call_iters": md.get("first_call_iters", 1),
    })
    out.field = _fill(out.field, {
        "n_obstacles": preset.n_obstacles,
        "radius": preset.radius,
        "clearance": preset.clearance,
        "margin": preset.margin,
        "corridor": preset.corridor,
        "span": preset.span,
    })
    out.to = _fill(out.to, {"horizon": TO_HORIZON[cfg.system], "n_iters": md.get("n_iters")})
    for key, ref in (("P", sd.P), ("Qf", sd.P), ("R", sd.R)):
        if len(getattr(out.weights, key)) not in (1, len(ref)):
            raise ConfigError(f"weights.{key}: expected 1 or {len(ref)} entries")
    try:
        ExperimentConfig.model_validate(out.model_dump())
    except ValidationError as err:
        raise ConfigError(_format_error(err)) from None
    return out


def to_json(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
