"""Experiment front end: configs, data assembly, runners, metrics, figures."""

from .config import (
    EXPERIMENTS,
    RunConfig,
    SWEEP_EXPERIMENTS,
    TASKS,
    load_config,
    parse_config,
    preset_config,
    preset_dict,
)
from .data import build_datasets
from .experiments import run_experiment, silence_mask, train_one
from .metrics import MetricsWriter, write_csv

__all__ = [
    "EXPERIMENTS",
    "MetricsWriter",
    "RunConfig",
    "SWEEP_EXPERIMENTS",
    "TASKS",
    "build_datasets",
    "load_config",
    "parse_config",
    "preset_config",
    "preset_dict",
    "run_experiment",
    "silence_mask",
    "train_one",
    "write_csv",
]
