"""Continual node classification by layer-wise analytic merging and analytic head reconstruction."""

from .config import ExperimentConfig, load_config
from .continual import RunRecord, run_adr, run_bare, run_experiment, run_frozen_analytic, run_joint

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "load_config",
    "run_adr",
    "run_bare",
    "run_experiment",
    "run_frozen_analytic",
    "run_joint",
]
