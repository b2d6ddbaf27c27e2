"""Experiment harness: configuration, end-to-end simulation, metrics and multi-run studies."""

from .analysis import client_scaling, compare_strategies, sweep
from .config import ConfigError, ExperimentConfig, load_config
from .experiment import Simulation, run_experiment
from .metrics import MetricsRecord, emit_metrics

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "run_experiment",
    "Simulation",
    "MetricsRecord",
    "emit_metrics",
    "compare_strategies",
    "sweep",
    "client_scaling",
]
