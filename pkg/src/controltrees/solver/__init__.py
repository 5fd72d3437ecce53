"""Distributed augmented Lagrangian solver for control-tree problems."""

from .config import ConfigError, NewtonConfig, SolverConfig
from .dal import (
    Residuals,
    SolveReport,
    SolverError,
    SolverState,
    check_termination,
    shift_sequence,
    solve,
    update_consensus,
    update_consensus_duals,
    update_equality_duals,
    update_inequality_duals,
)
from .lagrangian import BranchLagrangian, DualState, branch_lagrangian
from .newton import EvaluationError, InnerResult, solve_branch_subproblem

__all__ = [
    "BranchLagrangian",
    "ConfigError",
    "DualState",
    "EvaluationError",
    "InnerResult",
    "NewtonConfig",
    "Residuals",
    "SolveReport",
    "SolverConfig",
    "SolverError",
    "SolverState",
    "branch_lagrangian",
    "check_termination",
    "shift_sequence",
    "solve",
    "solve_branch_subproblem",
    "update_consensus",
    "update_consensus_duals",
    "update_equality_duals",
    "update_inequality_duals",
]
