"""Benchmark harness: presets, Monte Carlo runner and the ``bench`` CLI."""

from .presets import PRESETS, ExperimentConfig, effective_params, preset_names
from .runner import SummaryTable, TrialResult, nmse, run_experiment, validate_fvp

__all__ = [
    "PRESETS",
    "ExperimentConfig",
    "effective_params",
    "preset_names",
    "SummaryTable",
    "TrialResult",
    "nmse",
    "run_experiment",
    "validate_fvp",
]
