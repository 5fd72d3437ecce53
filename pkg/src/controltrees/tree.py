"""Belief states, control-tree topology and the branched problem model.

A control-tree is a common trunk of ``L`` steps followed by one branch per
discrete state hypothesis, each branch ``T`` steps long. Costs are weighted
by the belief; constraints apply to every branch regardless of weight.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .terms import Constraint, Cost, LinearConstraint

BELIEF_TOL = 1e-9
# cost weight floor for zero-probability branches (keeps the Newton system PD)
MIN_COST_WEIGHT = 1e-6


class Resolution(enum.Enum):
    """Observation status of a discrete hypothesis (crossing intent, obstacle existence)."""

    UNCERTAIN = "uncertain"
    TRUE = "true"
    FALSE = "false"


class BeliefError(ValueError):
    pass


class ProblemError(ValueError):
    pass


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BeliefState:
    """Probability distribution over a finite set of discrete states."""

    probs: np.ndarray

    def __post_init__(self):
        p = _readonly(np.atleast_1d(self.probs))
        if p.ndim != 1 or p.size == 0:
            raise BeliefError("belief must be a non-empty vector")
        if not np.all(np.isfinite(p)):
            raise BeliefError("belief entries must be finite")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise BeliefError(f"belief entries must lie in [0, 1], got {p.tolist()}")
        if abs(math.fsum(p) - 1.0) > BELIEF_TOL:
            raise BeliefError(f"belief sums to {math.fsum(p)!r}, expected 1")
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size

    def __getitem__(self, i):
        return float(self.probs[i])


def validate_belief(probs: Sequence[float]) -> BeliefState:
    return BeliefState(np.asarray(probs, dtype=float))


def exact_distribution(weights: Sequence[Fraction], pinned: Sequence[int] = ()) -> list[float]:
    """Round exact rational weights to floats whose exact sum is 1.

    Each entry is rounded once from its exact value; then one entry is
    replaced by one minus the exact sum of the others. Small entries are
    tried first because their finer float spacing can represent that
    difference; ``pinned`` entries are tried last. If no entry can take the
    repair within ``_MAX_REPAIR`` the plain rounding is returned, whose sum
    is within a few ulps of 1. ``math.fsum`` of a repaired result is 1.0.
    """
    if sum(weights) != 1:
        raise BeliefError("exact weights must sum to one")
    out = [float(w) for w in weights]
    total = sum(Fraction(x) for x in out)
    if total == 1:
        return out
    pinned = set(pinned)
    order = sorted((i for i in range(len(out)) if out[i] > 0.0),
                   key=lambda i: (i in pinned, out[i]))
    for j in order:
        fixed = 1 - (total - Fraction(out[j]))
        if (fixed >= 0 and abs(fixed - Fraction(out[j])) <= _MAX_REPAIR
                and Fraction(float(fixed)) == fixed):
            out[j] = float(fixed)
            return out
    return out


# largest change the sum repair may make to a single entry
_MAX_REPAIR = Fraction(1, 10**12)


def crossing_belief(crossing_probs: Sequence[float]) -> BeliefState:
    """Belief over "closest crossing pedestrian" for pedestrians sorted by position.

    Entry ``s < N`` is ``p_s * prod_{i<s} (1 - p_i)`` and entry ``N`` (nobody
    crosses) is ``prod_i (1 - p_i)``. Products are formed in exact rational
    arithmetic and rounded once, so ``[0.15] * 3`` gives a free-road entry of
    exactly ``0.614125``.
    """
    ps = [float(p) for p in crossing_probs]
    for p in ps:
        if not (0.0 <= p <= 1.0) or math.isnan(p):
            raise BeliefError(f"crossing probability {p!r} outside [0, 1]")
    exact = []
    remaining = Fraction(1)
    for p in ps:
        fp = Fraction(p)
        exact.append(fp * remaining)
        remaining *= 1 - fp
    exact.append(remaining)
    return BeliefState(np.array(exact_distribution(exact, pinned=(len(ps),))))


@dataclass(frozen=True)
class HorizonSpec:
    """Trunk length ``trunk_steps`` (L), branch length ``total_steps`` (T), step ``dt`` in s."""

    trunk_steps: int = 4
    total_steps: int = 20
    dt: float = 0.25

    def __post_init__(self):
        if not (1 <= self.trunk_steps < self.total_steps):
            raise ProblemError(
                f"need 1 <= L < T, got L={self.trunk_steps}, T={self.total_steps}"
            )
        if not self.dt > 0:
            raise ProblemError("dt must be positive")

    @property
    def duration(self) -> float:
        return self.total_steps * self.dt


@dataclass(frozen=True)
class BranchProblem:
    """One hypothesis: cost ``c_s``, inequalities ``g_s <= 0``, equalities ``h_s = 0``.

    ``steps`` and ``dim`` give the ``T x d`` shape of the branch variables;
    all terms act on its row-major flattening. ``bandwidth`` is the
    half-bandwidth of the curvature when the problem has K-order structure
    (``None`` means dense). ``kernel`` optionally supplies a compiled inner
    minimizer for the same Lagrangian (see ``SlalomKernel``); the generic
    terms remain the reference definition.
    """

    weight: float
    cost: Cost
    steps: int
    dim: int
    ineq: Optional[Constraint] = None
    eq: Optional[Constraint] = None
    bandwidth: Optional[int] = None
    label: str = ""
    kernel: Optional[object] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 <= self.weight <= 1.0):
            raise ProblemError(f"branch weight {self.weight!r} outside [0, 1]")
        n = self.steps * self.dim
        if self.ineq is None:
            object.__setattr__(self, "ineq", LinearConstraint.empty(n))
        if self.eq is None:
            object.__setattr__(self, "eq", LinearConstraint.empty(n))
        for name, term in (("cost", self.cost), ("ineq", self.ineq), ("eq", self.eq)):
            if term.size != n:
                raise ProblemError(f"{name} acts on {term.size} variables, branch has {n}")

    @property
    def size(self) -> int:
        return self.steps * self.dim

    @property
    def cost_weight(self) -> float:
        return max(self.weight, MIN_COST_WEIGHT)


@dataclass(frozen=True)
class TreeProblem:
    branches: tuple[BranchProblem, ...]
    horizon: HorizonSpec
    var_dim: int
    belief: BeliefState = field(repr=False, default=None)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def weights(self) -> np.ndarray:
        return self.belief.probs


def build_tree_problem(branches: Sequence[BranchProblem], horizon: HorizonSpec) -> TreeProblem:
    """Check shapes and weights; branch order is kept as the state order."""
    branches = tuple(branches)
    if not branches:
        raise ProblemError("a tree needs at least one branch")
    dims = {b.dim for b in branches}
    if len(dims) != 1:
        raise ProblemError(f"branches have mixed per-step dimensions {sorted(dims)}")
    for i, b in enumerate(branches):
        if b.steps != horizon.total_steps:
            raise ProblemError(
                f"branch {i} has {b.steps} steps, horizon has {horizon.total_steps}"
            )
    belief = validate_belief([b.weight for b in branches])
    return TreeProblem(branches, horizon, dims.pop(), belief)


@dataclass(frozen=True)
class ControlTree:
    """Solved trunk-and-branches policy.

    ``branches[s]`` is the ``T x d`` sequence of branch ``s``; ``consensus`` is
    the ``L x d`` shared trunk.
    """

    horizon: HorizonSpec
    branches: tuple[np.ndarray, ...]
    consensus: np.ndarray
    weights: tuple[float, ...] = ()
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        bs = tuple(_readonly(b) for b in self.branches)
        if not bs:
            raise ProblemError("control tree without branches")
        shape = bs[0].shape
        if len(shape) != 2 or shape[0] != self.horizon.total_steps:
            raise ProblemError(f"branch shape {shape} does not match horizon")
        if any(b.shape != shape for b in bs):
            raise ProblemError("branches have inconsistent shapes")
        c = _readonly(self.consensus)
        if c.shape != (self.horizon.trunk_steps, shape[1]):
            raise ProblemError(f"consensus shape {c.shape} does not match trunk")
        object.__setattr__(self, "branches", bs)
        object.__setattr__(self, "consensus", c)
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def first_control(self) -> np.ndarray:
        return self.consensus[0]

    def trunk_disagreement(self) -> float:
        L = self.horizon.trunk_steps
        return max(float(np.max(np.abs(b[:L] - self.consensus))) for b in self.branches)
