"""Asynchronous molecular NOMA: analytic BEP engine, Monte-Carlo simulator and adaptation protocol."""

from .analytic_bep import (
    BepResult,
    EnumerationCapError,
    GainMatrix,
    bep_mdma,
    bep_system,
    bep_tdma,
    build_gain_matrix,
    mutual_information,
    poisson_cdf,
)
from .ma_schemes import SymbolFrame, ThresholdTree
from .mcs import RunPlan, run_mcs
from .optimizer import optimize_thresholds
from .protocol import ProtocolConfig, ScheduleChange, run_protocol, run_seed_ensemble
from .scenario import ScenarioConfig, ScenarioError

__version__ = "0.1.0"

__all__ = [
    "BepResult",
    "EnumerationCapError",
    "GainMatrix",
    "ProtocolConfig",
    "RunPlan",
    "ScenarioConfig",
    "ScenarioError",
    "ScheduleChange",
    "SymbolFrame",
    "ThresholdTree",
    "bep_mdma",
    "bep_system",
    "bep_tdma",
    "build_gain_matrix",
    "mutual_information",
    "optimize_thresholds",
    "poisson_cdf",
    "run_mcs",
    "run_protocol",
    "run_seed_ensemble",
]
