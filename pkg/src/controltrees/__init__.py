"""Control-tree model predictive control under partially observed discrete states."""

from .tree import (
    BeliefError,
    BeliefState,
    BranchProblem,
    ControlTree,
    HorizonSpec,
    ProblemError,
    Resolution,
    TreeProblem,
    build_tree_problem,
    crossing_belief,
    validate_belief,
)

__version__ = "0.1.0"
