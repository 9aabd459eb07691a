from .barrier import FlowBarrier, barrier_solve, central_phase, extract_duals, slack_phase
from .config import (BarrierConfig, ConvergenceError, DegenerateInstanceError, InfeasibleError,
                     NotStrictlyFeasibleError, NumericalError, PathFollowConfig, SolveReport, SolverError)
from .fptas import ENGINES, feasible_eps_solution, find_eps, relative_fptas, search_eps
from .newton import DenseObjective, newton_center
from .pathfollow import DiagQcqp, path_following_solve

__all__ = [
    "BarrierConfig", "ConvergenceError", "DegenerateInstanceError", "DenseObjective", "DiagQcqp",
    "ENGINES", "FlowBarrier", "InfeasibleError", "NotStrictlyFeasibleError", "NumericalError",
    "PathFollowConfig", "SolveReport", "SolverError", "barrier_solve", "central_phase",
    "extract_duals", "feasible_eps_solution", "find_eps", "newton_center", "path_following_solve",
    "relative_fptas", "search_eps", "slack_phase",
]
