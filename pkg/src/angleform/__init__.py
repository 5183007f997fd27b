"""Angle-based formation control of double-integrator agents in port-Hamiltonian form."""

from .errors import (
    CoincidentAgents,
    ConfigError,
    EstimatorSingular,
    FormationError,
    InvalidAttachment,
    NonFiniteState,
)
from .sim import Scenario, TrajectoryLog, load_scenario, paper_scenario, run

__all__ = [
    "CoincidentAgents",
    "ConfigError",
    "EstimatorSingular",
    "FormationError",
    "InvalidAttachment",
    "NonFiniteState",
    "Scenario",
    "TrajectoryLog",
    "load_scenario",
    "paper_scenario",
    "run",
]
