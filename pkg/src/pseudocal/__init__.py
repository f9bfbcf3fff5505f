"""Pseudo-calibrated moments for planted clique and the ribbon machinery behind them."""
from .errors import ConfigError, GuardError, InvariantViolation
from .graphcore import Graph, sample_null, sample_planted
from .pseudomoments import PEParams, build_moment_matrix, evaluate_calibrated, evaluate_fk

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "GuardError", "InvariantViolation", "Graph", "sample_null", "sample_planted",
    "PEParams", "build_moment_matrix", "evaluate_calibrated", "evaluate_fk",
]
