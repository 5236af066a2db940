"""Experiment driver, reports and command-line interface."""
from .experiments import (
    ABLATION_VARIANTS,
    ExperimentReport,
    MethodSpec,
    SweepResult,
    benchmark_inference,
    dgar_method,
    erm_method,
    run_ablation,
    run_lodo,
    run_sweep,
    source_covariance_gap,
    variant_method,
)

__all__ = [
    "ABLATION_VARIANTS", "ExperimentReport", "MethodSpec", "SweepResult", "benchmark_inference",
    "dgar_method", "erm_method", "run_ablation", "run_lodo", "run_sweep", "source_covariance_gap",
    "variant_method",
]
