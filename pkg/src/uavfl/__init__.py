"""Completion-time minimisation for UAV-assisted federated learning."""

from .errors import InfeasibleError, MonotonicityViolation, NonConvergenceError, SolverError
from .options import SolverOptions
from .scenario import ConfigError, Scenario, generate_scenario, load_scenario

__all__ = [
    "ConfigError",
    "InfeasibleError",
    "MonotonicityViolation",
    "NonConvergenceError",
    "Scenario",
    "SolverError",
    "SolverOptions",
    "generate_scenario",
    "load_scenario",
]
