"""Experiment presets, the runner and the command line."""
from .presets import (
    DEFAULT_THRESHOLDS,
    PRESETS,
    STAGES,
    ExperimentSpec,
    five_station_reference,
    load_experiment,
    preset_five_station,
    preset_five_station_quick,
    preset_single_station_interchange,
)
from .runner import METRICS, Check, ExperimentError, ExperimentResult, run_experiment

__all__ = [
    "DEFAULT_THRESHOLDS",
    "METRICS",
    "PRESETS",
    "STAGES",
    "Check",
    "ExperimentError",
    "ExperimentResult",
    "ExperimentSpec",
    "five_station_reference",
    "load_experiment",
    "preset_five_station",
    "preset_five_station_quick",
    "preset_single_station_interchange",
    "run_experiment",
]
