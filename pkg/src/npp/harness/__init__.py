"""Experiment orchestration and the command line interface."""

from .experiments import (
    ConfigError,
    DataError,
    ExperimentConfig,
    ResultRow,
    read_rows,
    replicate_metrics,
    run_bf_curves,
    run_experiment,
    run_kl_curves,
    run_median_experiment,
    summarize,
    write_rows,
)

__all__ = [
    "ConfigError",
    "DataError",
    "ExperimentConfig",
    "ResultRow",
    "read_rows",
    "replicate_metrics",
    "run_bf_curves",
    "run_experiment",
    "run_kl_curves",
    "run_median_experiment",
    "summarize",
    "write_rows",
]
