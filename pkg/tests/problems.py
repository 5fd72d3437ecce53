"""Random problem generators shared by the unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from controltrees.terms import LinearConstraint, QuadraticCost
from controltrees.tree import BranchProblem, HorizonSpec, build_tree_problem


def random_qp(rng: np.random.Generator, max_steps: int = 10, max_dim: int = 2):
    """A strictly convex single-branch QP with bound and cumulative-state rows.

    The state rows limit running sums of each input channel, like a position
    driven by velocity commands. ``z = 0`` is strictly feasible.
    Returns ``(problem, H, f, A, b)``.
    """
    T = int(rng.integers(2, max_steps + 1))
    d = int(rng.integers(1, max_dim + 1))
    n = T * d
    M = rng.normal(size=(n, n))
    H = M.T @ M / n + 0.1 * np.eye(n)
    f = 3.0 * rng.normal(size=n)
    ub = rng.uniform(0.3, 2.0, size=n)
    lb = rng.uniform(0.3, 2.0, size=n)
    rows = [np.eye(n), -np.eye(n)]
    rhs = [ub, lb]
    for c in range(d):
        S = np.zeros((T, n))
        for t in range(T):
            S[t, c: (t + 1) * d: d] = 1.0
        sign = rng.choice([-1.0, 1.0])
        rows.append(sign * S)
        rhs.append(rng.uniform(0.2, 2.0, size=T))
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    L = int(rng.integers(1, T))
    horizon = HorizonSpec(L, T, 0.1)
    branch = BranchProblem(weight=1.0, cost=QuadraticCost(H, f), steps=T, dim=d,
                           ineq=LinearConstraint(A, b))
    return build_tree_problem([branch], horizon), H, f, A, b
