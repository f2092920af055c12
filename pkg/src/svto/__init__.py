"""Sampling-based trajectory optimization and MPC around differential dynamic programming."""

from __future__ import annotations

from svto.cost import BarrierParams, Obstacle, Problem, QuadraticCost
from svto.ddp import DDPResult, SolverConfig, solve
from svto.dynamics import make_model
from svto.ensemble import EnsembleResult
from svto.meddp import MaxEntSampling, meddp_solve
from svto.mppi import MppiConfig, MppiPlanner
from svto.svddp import Schedule, SteinPerturbation, svddp_solve

__all__ = [
    "BarrierParams",
    "DDPResult",
    "EnsembleResult",
    "MaxEntSampling",
    "MppiConfig",
    "MppiPlanner",
    "Obstacle",
    "Problem",
    "QuadraticCost",
    "Schedule",
    "SolverConfig",
    "SteinPerturbation",
    "make_model",
    "meddp_solve",
    "solve",
    "svddp_solve",
]
