"""Experiment orchestration: config, multi-seed runs, CSV logs, figures and the CLI."""
from .config import ALGORITHMS, ExperimentConfig, from_dict, load_config
from .experiment import run, run_seed

__all__ = ["ALGORITHMS", "ExperimentConfig", "from_dict", "load_config", "run", "run_seed"]
