"""Box-constrained minimization by limited-integrator gradient flows."""

from .core import (
    ActiveBoundSet,
    ArgumentError,
    BoxDynError,
    BoxProblem,
    EvaluationError,
    FeasibilityError,
    GainMatrix,
    IntegratorKind,
    LimiterMode,
    Method,
    MethodContractError,
    NonTerminationError,
    SelectionMatrixView,
    SolveError,
    SolveOptions,
    SolveReport,
    project_to_box,
)
from .kkt import KKTReport, kkt_report
from .problems import example1, example2, genwood, problem_from_id
from .solve import solve_to_stationarity

__version__ = "0.1.0"

__all__ = [
    "ActiveBoundSet",
    "ArgumentError",
    "BoxDynError",
    "BoxProblem",
    "EvaluationError",
    "FeasibilityError",
    "GainMatrix",
    "IntegratorKind",
    "KKTReport",
    "LimiterMode",
    "Method",
    "MethodContractError",
    "NonTerminationError",
    "SelectionMatrixView",
    "SolveError",
    "SolveOptions",
    "SolveReport",
    "example1",
    "example2",
    "genwood",
    "kkt_report",
    "problem_from_id",
    "project_to_box",
    "solve_to_stationarity",
]
