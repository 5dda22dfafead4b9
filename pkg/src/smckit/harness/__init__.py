"""Config-driven experiment harness and CSV output."""

from .config import EXPERIMENT_KINDS, ExperimentConfig, load_config, parse_config
from .csvio import FIELDS, ResultRow, read_csv, render_csv, write_csv
from .experiments import run_experiment

__all__ = [
    "EXPERIMENT_KINDS", "ExperimentConfig", "load_config", "parse_config",
    "FIELDS", "ResultRow", "read_csv", "render_csv", "write_csv", "run_experiment",
]
