"""Scaling benchmark: decomposed tree solve versus one undecomposed joint problem.

The joint problem has the same optimum as the tree. Its variables are the
shared trunk followed by every branch tail, so the non-anticipativity
constraint is satisfied by construction and a single augmented-Lagrangian
solve handles all branches at once, factorizing the full dense Hessian
with LAPACK. The decomposed side runs the solver's default path (compiled
for these QP trees); ``generic=True`` runs both sides through the same
Python code instead.
"""

from __future__ import annotations

import time
from dataclasses import astuple, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse, stats

from .acc import ACC_SOLVER_CONFIG, AccCostParams, CarState, condense_branch
from .solver import SolverConfig, solve
from .terms import LinearConstraint, QuadraticCost
from .tree import BranchProblem, HorizonSpec, TreeProblem, build_tree_problem

# stop lines this far ahead are always reachable with full braking at 13.4 m/s
STOP_RANGE = (25.0, 90.0)


def synthetic_acc_problem(n_branches: int, seed: int = 0,
                          horizon: HorizonSpec = HorizonSpec(),
                          params: AccCostParams = AccCostParams()) -> TreeProblem:
    """An ``n_branches`` pedestrian tree: one free-road branch, the others stop.

    Stop positions and branch weights are drawn from ``seed``.
    """
    if n_branches < 1:
        raise ValueError("need at least one branch")
    rng = np.random.default_rng(seed)
    state0 = CarState(0.0, params.v_desired)
    w = rng.random(n_branches) + 0.1
    w = w / w.sum()
    w[-1] = max(0.0, 1.0 - w[:-1].sum())
    stops = [None] + list(rng.uniform(*STOP_RANGE, size=n_branches - 1))
    branches = [
        condense_branch(state0, params, stop, horizon, float(wi), label=f"b{i}")
        for i, (stop, wi) in enumerate(zip(stops, w))
    ]
    return build_tree_problem(branches, horizon)


def joint_problem(problem: TreeProblem) -> TreeProblem:
    """The undecomposed problem: a single branch over ``[trunk, tail_1, ..., tail_N]``.

    Only dense quadratic costs and linear inequalities are supported, which is
    what the pedestrian front-end produces.
    """
    H = problem.horizon
    L, T, d = H.trunk_steps, H.total_steps, problem.var_dim
    N = problem.n_branches
    nt, nl = L * d, (T - L) * d
    n = nt + N * nl
    hess = np.zeros((n, n))
    lin = np.zeros(n)
    const = 0.0
    rows, rhs = [], []
    for s, b in enumerate(problem.branches):
        if not isinstance(b.cost, QuadraticCost) or not isinstance(b.ineq, LinearConstraint):
            raise TypeError("joint_problem needs quadratic costs and linear inequalities")
        if b.eq.dim:
            raise TypeError("joint_problem does not support equality constraints")
        idx = np.concatenate([np.arange(nt), nt + s * nl + np.arange(nl)])
        p = b.cost_weight
        hess[np.ix_(idx, idx)] += p * b.cost.hessian
        lin[idx] += p * b.cost.linear
        const += p * b.cost.constant
        A = sparse.csr_matrix(b.ineq.A)
        sel = sparse.csr_matrix((np.ones(idx.size), (np.arange(idx.size), idx)),
                                shape=(idx.size, n))
        rows.append(A @ sel)
        rhs.append(b.ineq.b)
    ineq = LinearConstraint(sparse.vstack(rows, format="csr"), np.concatenate(rhs))
    branch = BranchProblem(weight=1.0, cost=QuadraticCost(hess, lin, const),
                           steps=n // d, dim=d, ineq=ineq, label="joint")
    return build_tree_problem([branch], HorizonSpec(1, n // d, H.dt))


def split_joint(problem: TreeProblem, z_joint: np.ndarray) -> list[np.ndarray]:
    """Branch sequences ``T x d`` recovered from a joint solution."""
    H = problem.horizon
    L, T, d = H.trunk_steps, H.total_steps, problem.var_dim
    z = np.asarray(z_joint, dtype=float).ravel()
    nt, nl = L * d, (T - L) * d
    return [np.concatenate([z[:nt], z[nt + s * nl: nt + (s + 1) * nl]]).reshape(T, d)
            for s in range(problem.n_branches)]


@dataclass(frozen=True)
class ScaleRow:
    n_branches: int
    decomposed_ms: float
    decomposed_iter_ms: float
    decomposed_iters: int
    joint_ms: float
    joint_iter_ms: float
    joint_iters: int
    max_abs_diff: float

    HEADER = ("n_branches", "decomposed_ms", "decomposed_iter_ms", "decomposed_iters",
              "joint_ms", "joint_iter_ms", "joint_iters", "max_abs_diff")

    def row(self) -> tuple:
        return astuple(self)


def _timed(problem, cfg, repetitions, fused):
    best = None
    for _ in range(repetitions):
        t0 = time.perf_counter()
        tree, rep = solve(problem, cfg=cfg, fused=fused)
        dt = time.perf_counter() - t0
        best = dt if best is None else min(best, dt)
    return tree, rep, best


def scale_bench(counts: Sequence[int] = (2, 5, 10, 25, 50, 100), repetitions: int = 3,
                seed: int = 0, cfg: Optional[SolverConfig] = None,
                joint: bool = True, generic: bool = False) -> list[ScaleRow]:
    """Time both solves for each branch count (best of ``repetitions``).

    ``max_abs_diff`` is the largest difference between the decomposed branch
    sequences and those of the joint solution.
    """
    cfg = ACC_SOLVER_CONFIG if cfg is None else cfg
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    out = []
    for n in counts:
        if n < 1:
            raise ValueError("branch counts must be >= 1")
        problem = synthetic_acc_problem(n, seed)
        tree, rep, t_dec = _timed(problem, cfg, repetitions, False if generic else None)
        it_dec = max(rep.iterations, 1)
        if joint:
            jp = joint_problem(problem)
            jtree, jrep, t_joint = _timed(jp, cfg, repetitions, False)
            zs = split_joint(problem, jtree.branches[0])
            diff = max(float(np.max(np.abs(a - b))) for a, b in zip(zs, tree.branches))
            it_joint = max(jrep.iterations, 1)
            joint_cols = (1e3 * t_joint, 1e3 * t_joint / it_joint, jrep.iterations, diff)
        else:
            joint_cols = (float("nan"), float("nan"), 0, float("nan"))
        out.append(ScaleRow(n, 1e3 * t_dec, 1e3 * t_dec / it_dec, rep.iterations, *joint_cols))
    return out


def linear_fit(x, y) -> tuple[float, float, float]:
    """``(a, b, r2)`` of the least-squares line ``y = a + b x``."""
    res = stats.linregress(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return float(res.intercept), float(res.slope), float(res.rvalue ** 2)
