"""Benchmark harness: configuration, datasets, experiment modes, reports and the CLI."""
from .accounting import gradient_steps
from .config import ExperimentConfig, load_config
from .data import DatasetSplit, load_idx, make_synthetic, split
from .experiment import TrialReport, run_experiment
from .report import ema, write_report

__all__ = [
    "DatasetSplit",
    "ExperimentConfig",
    "TrialReport",
    "ema",
    "gradient_steps",
    "load_config",
    "load_idx",
    "make_synthetic",
    "run_experiment",
    "split",
    "write_report",
]
