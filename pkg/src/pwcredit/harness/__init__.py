"""Experiment configuration, orchestration, reports and export."""
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .suite import SuiteResult, run_suite

__all__ = ["ConfigError", "ExperimentConfig", "SuiteResult", "load_config", "parse_config",
           "run_suite"]
