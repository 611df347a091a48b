"""Free-final-time differential dynamic programming."""

from ftddp.core import GainSchedule, IterationRecord, ProblemDefinition, TrajectoryGrid, ValueExpansion
from ftddp.estimator import FreeTimeDDP
from ftddp.exceptions import (
    BackwardPassError,
    DivergenceError,
    DomainError,
    EvaluationError,
    FTDDPError,
)
from ftddp.models import REGISTRY, make_problem
from ftddp.solver import Solution, SolverOptions, solve

__all__ = [
    "BackwardPassError",
    "DivergenceError",
    "DomainError",
    "EvaluationError",
    "FTDDPError",
    "FreeTimeDDP",
    "GainSchedule",
    "IterationRecord",
    "ProblemDefinition",
    "REGISTRY",
    "Solution",
    "SolverOptions",
    "TrajectoryGrid",
    "ValueExpansion",
    "make_problem",
    "solve",
]
