"""Experiment orchestration: configs, seeded sweeps, CSV/SVG output, CLI."""

from .config import ExperimentConfig, load_config, parse_config_text
from .experiment import ResultRow, mae, pcl, run_experiment

__all__ = ["ExperimentConfig", "ResultRow", "load_config", "mae", "parse_config_text", "pcl", "run_experiment"]
