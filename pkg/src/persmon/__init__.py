"""Persistent monitoring of 1D targets: exact simulation, event-driven gradients
and a discrete visit scheduler for comparison."""
from .model import AgentSpec, ConfigError, MissionConfig, Target, UncertaintyRate
from .hybrid_sim import SimTrace, TrajectoryParams, cost, run, simulate
from .ipa import gradient, gradient_report
from .optimizer import DescentConfig, DescentReport, optimize
from .potential_field import PotentialConfig
from .stochastic import RandomModel
from .graph_scheduler import VisitSchedule, extend_periodic, optimize_dwells, solve

__version__ = "0.1.0"

__all__ = [
    "AgentSpec", "ConfigError", "MissionConfig", "Target", "UncertaintyRate",
    "SimTrace", "TrajectoryParams", "cost", "run", "simulate", "gradient", "gradient_report",
    "DescentConfig", "DescentReport", "optimize", "PotentialConfig", "RandomModel",
    "VisitSchedule", "extend_periodic", "optimize_dwells", "solve",
]
