"""Deterministic-annealing solvers for the TSP and multiple-salesmen variants."""
from .engine import Schedule, Trace, anneal, default_schedule
from .instance import Depot, Node, ProblemInstance, Solution, Variant, make_instance
from .variants import rules_for

__all__ = [
    "Depot", "Node", "ProblemInstance", "Schedule", "Solution", "Trace", "Variant",
    "anneal", "default_schedule", "make_instance", "rules_for",
]
__version__ = "0.1.0"
