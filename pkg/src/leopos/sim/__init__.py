"""Scenario files, Monte-Carlo runs and result tables."""

from .results import ResultTable, compare_runs, emit_cdf, read_cdf
from .scenario import ConfigError, Scenario, load_scenario

__all__ = ["ConfigError", "ResultTable", "Scenario", "compare_runs", "emit_cdf", "load_scenario", "read_cdf"]
