"""Experiment runner: synthetic data, tensor-bundle I/O, and CSV metrics."""

from .bundle import BundleError, BundleErrorCode, load_bundle, save_bundle
from .config import ExperimentConfig, ExperimentRow
from .runner import emit_csv, run_experiment, run_sweep
from .synth import generate_synthetic

__all__ = [
    "BundleError",
    "BundleErrorCode",
    "ExperimentConfig",
    "ExperimentRow",
    "emit_csv",
    "generate_synthetic",
    "load_bundle",
    "run_experiment",
    "run_sweep",
    "save_bundle",
]
