"""Experiment orchestration: configs, CSV I/O, method dispatch and benchmarks."""
from .config import ALL_METHODS, TABLE1_METHODS, ExperimentConfig, load_config, parse_config
from .runner import BenchmarkResult, MethodSpec, benchmark, run_method

__all__ = [
    "ALL_METHODS", "TABLE1_METHODS", "ExperimentConfig", "load_config", "parse_config",
    "BenchmarkResult", "MethodSpec", "benchmark", "run_method",
]
