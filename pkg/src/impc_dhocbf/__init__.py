"""Iterative convex MPC with discrete-time high-order control barrier functions."""
from .cbf import CbfSpec, CircleObstacle
from .cftoc import Bounds, CostWeights
from .config import load_scenario
from .dynamics import ModelSpec, Trajectory, unicycle_model
from .impc import (ClosedLoopResult, ConfigurationError, ConvergenceConfig, Scenario,
                   closed_loop, impc_step)
from .qp import QpProblem, QpSettings, QpStatus, solve

__all__ = [
    "Bounds", "CbfSpec", "CircleObstacle", "ClosedLoopResult", "ConfigurationError",
    "ConvergenceConfig", "CostWeights", "ModelSpec", "QpProblem", "QpSettings", "QpStatus",
    "Scenario", "Trajectory", "closed_loop", "impc_step", "load_scenario", "solve",
    "unicycle_model",
]
