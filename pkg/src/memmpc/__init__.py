"""Real-time MPC with a learned value-function memory for spatial warm starts."""

from .config import Problem, Scenario, load_scenario, replace
from .controller import Controller, RunRecord, run_closed_loop
from .hull import ConvexHullObject, HullLearner, init_hull
from .lipnet import LipschitzDataset

__all__ = [
    "Controller", "ConvexHullObject", "HullLearner", "LipschitzDataset", "Problem",
    "RunRecord", "Scenario", "init_hull", "load_scenario", "replace", "run_closed_loop",
]
__version__ = "0.1.0"
