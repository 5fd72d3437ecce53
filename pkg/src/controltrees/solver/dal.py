"""Distributed augmented Lagrangian loop over the branches of a tree problem.

Each outer iteration has a distributed phase (one Newton minimization and
one multiplier update per branch, run concurrently) followed by a barrier
and a centralized phase that averages the trunks and updates the consensus
multipliers. All reductions run in branch order, so results do not depend
on the worker count.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..tree import ControlTree, TreeProblem
from .config import SolverConfig
from .lagrangian import DualState
from .fused import fused_solve, is_fusable, pack
from .newton import EvaluationError, solve_branch_subproblem


class SolverError(RuntimeError):
    pass


def update_inequality_duals(lam, g_val, mu: float) -> np.ndarray:
    return np.maximum(0.0, np.asarray(lam, dtype=float) + 2.0 * mu * np.asarray(g_val, dtype=float))


def update_equality_duals(kappa, h_val, nu: float) -> np.ndarray:
    return np.asarray(kappa, dtype=float) + 2.0 * nu * np.asarray(h_val, dtype=float)


def update_consensus(branch_vars: Sequence[np.ndarray], trunk_steps: int,
                     weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Average of the branch trunks, accumulated in branch order.

    With ``weights`` the average is weighted (experimental option).
    """
    if not branch_vars:
        raise ValueError("no branches to average")
    L = trunk_steps
    if weights is None:
        acc = np.array(branch_vars[0][:L], dtype=float)
        for z in branch_vars[1:]:
            acc += z[:L]
        return acc / len(branch_vars)
    w = [float(x) for x in weights]
    acc = w[0] * np.array(branch_vars[0][:L], dtype=float)
    for wi, z in zip(w[1:], branch_vars[1:]):
        acc += wi * z[:L]
    return acc / sum(w)


def update_consensus_duals(eta, z_branch, consensus, rho: float) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    L = eta.shape[0]
    return eta + rho * (np.asarray(z_branch, dtype=float)[:L] - consensus)


@dataclass(frozen=True)
class Residuals:
    """Worst case over branches of the four termination residuals (inf-norms)."""

    aula_primal: float
    aula_dual: float
    admm_primal: float
    admm_dual: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.aula_primal, self.aula_dual, self.admm_primal, self.admm_dual)


def check_termination(res: Residuals, cfg: SolverConfig) -> bool:
    return (
        res.aula_primal <= cfg.eps_pri
        and res.aula_dual <= cfg.eps_dual
        and res.admm_primal <= cfg.xi_pri
        and res.admm_dual <= cfg.xi_dual
    )


def residual_score(res: Residuals, cfg: SolverConfig) -> float:
    """Largest residual relative to its threshold; below 1 means converged.

    Ranks iterates when the iteration cap is hit. Counting the dual
    residuals keeps a feasible but still moving early iterate from winning.
    """
    return max(res.aula_primal / cfg.eps_pri, res.aula_dual / cfg.eps_dual,
               res.admm_primal / cfg.xi_pri, res.admm_dual / cfg.xi_dual)


def constraint_violation(g_val, h_val) -> float:
    """Primal AuLa residual: worst positive inequality part or equality magnitude."""
    v = 0.0
    if np.size(g_val):
        v = max(v, float(np.max(g_val)))
    if np.size(h_val):
        v = max(v, float(np.max(np.abs(h_val))))
    return v


@dataclass
class SolverState:
    """Iterates and multipliers; what a warm start carries between cycles."""

    z: list[np.ndarray]
    consensus: np.ndarray
    duals: list[DualState]

    def shifted(self, steps: float, extrapolate: bool = False) -> "SolverState":
        """Advance the plans by ``steps`` time steps.

        Branch sequences are resampled at ``t + steps`` (linear interpolation
        for fractional shifts; past the end the last step is replicated, or
        continued at its final increment with ``extrapolate``) and the consensus is the
        average of the shifted trunks, which continue into the branches. AuLa
        multipliers are kept and consensus multipliers reset to zero.
        """
        z = [shift_sequence(zs, steps, extrapolate) for zs in self.z]
        L = self.consensus.shape[0]
        cons = update_consensus(z, L)
        duals = [DualState(d.lam.copy(), d.kappa.copy(), np.zeros_like(d.eta)) for d in self.duals]
        return SolverState(z, cons, duals)


def shift_sequence(seq: np.ndarray, steps: float, extrapolate: bool = False) -> np.ndarray:
    """Resample ``seq`` at ``t + steps``.

    Past the last step the value is held, or with ``extrapolate`` continued
    linearly at the final increment (pose sequences keep moving).
    """
    seq = np.asarray(seq, dtype=float)
    if steps == 0:
        return seq.copy()
    T = seq.shape[0]
    t_raw = np.arange(T) + steps
    t = np.minimum(t_raw, T - 1)
    i0 = np.floor(t).astype(int)
    i1 = np.minimum(i0 + 1, T - 1)
    frac = (t - i0)[:, None]
    out = (1.0 - frac) * seq[i0] + frac * seq[i1]
    if extrapolate and T > 1:
        over = (t_raw - t)[:, None]
        out += over * (seq[-1] - seq[-2])
    return out


@dataclass
class SolveReport:
    iterations: int = 0
    converged: bool = False
    history: list[Residuals] = field(default_factory=list)
    phase_times: list[tuple[float, float]] = field(default_factory=list)
    newton_steps: list[int] = field(default_factory=list)
    factorizations: list[int] = field(default_factory=list)
    evaluations: list[int] = field(default_factory=list)
    inner_nonconverged: int = 0
    state: Optional[SolverState] = field(default=None, repr=False)
    # set by the compiled path, which does not time the two phases separately
    elapsed: Optional[float] = None

    @property
    def wall_time(self) -> float:
        if self.elapsed is not None:
            return self.elapsed
        return float(sum(a + b for a, b in self.phase_times))

    CSV_HEADER = (
        "iteration",
        "aula_primal",
        "aula_dual",
        "admm_primal",
        "admm_dual",
        "distributed_phase_s",
        "consensus_phase_s",
    )

    def rows(self, timings: bool = True) -> list[tuple]:
        out = []
        for k, (res, (t1, t2)) in enumerate(zip(self.history, self.phase_times), start=1):
            row = (k, *res.as_tuple())
            out.append(row + (t1, t2) if timings else row)
        return out

    def to_csv(self, timings: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_HEADER if timings else self.CSV_HEADER[:5])
        for row in self.rows(timings):
            w.writerow([row[0], *(repr(float(x)) for x in row[1:])])
        return buf.getvalue()


def _branch_phase(branch, z_prev, consensus, duals: DualState, cfg: SolverConfig):
    """Distributed phase for one branch: Newton solve then AuLa multiplier updates."""
    inner = solve_branch_subproblem(branch, z_prev, consensus, duals, cfg)
    z_new = inner.z
    flat = z_new.ravel()
    g = branch.ineq.value(flat)
    h = branch.eq.value(flat)
    new_duals = DualState(
        update_inequality_duals(duals.lam, g, cfg.mu),
        update_equality_duals(duals.kappa, h, cfg.nu),
        duals.eta,
    )
    primal = constraint_violation(g, h)
    dual = float(np.max(np.abs(z_new - z_prev))) if z_new.size else 0.0
    return z_new, new_duals, primal, dual, inner


def solve(problem: TreeProblem, z_init: Optional[Sequence[np.ndarray]] = None,
          consensus_init: Optional[np.ndarray] = None, cfg: SolverConfig = SolverConfig(),
          duals_init: Optional[Sequence[DualState]] = None, workers: int = 1,
          fused: Optional[bool] = None) -> tuple[ControlTree, SolveReport]:
    """Optimize a control-tree.

    Parameters
    ----------
    problem : TreeProblem
        Branches in state order.
    z_init : list of (T, d) arrays, optional
        Initial branch sequences; zeros when omitted.
    consensus_init : (L, d) array, optional
        Initial trunk; the average of ``z_init`` trunks when omitted.
    cfg : SolverConfig
    duals_init : list of DualState, optional
        Warm-start multipliers; all zeros when omitted.
    workers : int
        Threads for the distributed phase. Results are identical for any value.
    fused : bool, optional
        Run the compiled loop (dense-QP trees with uniform consensus only).
        ``None`` picks it whenever the problem qualifies; the choice never
        depends on ``workers``.

    Returns
    -------
    tree : ControlTree
        The last iterate if converged, otherwise the iterate with the smallest
        :func:`residual_score`.
    report : SolveReport
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    H = problem.horizon
    L, T, d = H.trunk_steps, H.total_steps, problem.var_dim
    N = problem.n_branches
    if z_init is None:
        z = [np.zeros((T, d)) for _ in range(N)]
    else:
        z = [np.array(zi, dtype=float).reshape(T, d) for zi in z_init]
        if len(z) != N:
            raise ValueError(f"{len(z)} initial sequences for {N} branches")
    if not all(np.all(np.isfinite(zi)) for zi in z):
        raise ValueError("initial sequences must be finite")
    weights = problem.weights if cfg.weighted_consensus else None
    if consensus_init is None:
        cons = update_consensus(z, L, weights)
    else:
        cons = np.array(consensus_init, dtype=float).reshape(L, d)
    if duals_init is None:
        duals = [DualState.zeros(b, L) for b in problem.branches]
    else:
        duals = [dd.copy() for dd in duals_init]
        if len(duals) != N:
            raise ValueError(f"{len(duals)} dual states for {N} branches")

    if fused is None:
        fused = not cfg.weighted_consensus and is_fusable(problem)
    elif fused and (cfg.weighted_consensus or not is_fusable(problem)):
        raise ValueError("problem does not qualify for the compiled path")
    if fused:
        return _solve_fused(problem, z, cons, duals, cfg)

    report = SolveReport()
    best = None
    best_score = np.inf
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 and N > 1 else None
    try:
        for k in range(cfg.max_outer_iters):
            t0 = time.perf_counter()
            args = [(problem.branches[s], z[s], cons, duals[s], cfg) for s in range(N)]
            try:
                if pool is None:
                    results = [_branch_phase(*a) for a in args]
                else:
                    results = list(pool.map(lambda a: _branch_phase(*a), args))
            except EvaluationError as exc:
                raise SolverError(f"inner minimization failed at outer iteration {k + 1}: {exc}") from exc
            t1 = time.perf_counter()

            z_new = [r[0] for r in results]
            duals = [r[1] for r in results]
            cons_new = update_consensus(z_new, L, weights)
            admm_primal = 0.0
            for s in range(N):
                duals[s].eta = update_consensus_duals(duals[s].eta, z_new[s], cons_new, cfg.rho)
                admm_primal = max(admm_primal, float(np.max(np.abs(z_new[s][:L] - cons_new))))
            t2 = time.perf_counter()

            res = Residuals(
                aula_primal=max(r[2] for r in results),
                aula_dual=max(r[3] for r in results),
                admm_primal=admm_primal,
                admm_dual=float(np.max(np.abs(cons_new - cons))),
            )
            report.history.append(res)
            report.phase_times.append((t1 - t0, t2 - t1))
            report.newton_steps.append(sum(r[4].iterations for r in results))
            report.factorizations.append(sum(r[4].factorizations for r in results))
            report.evaluations.append(sum(r[4].evaluations for r in results))
            report.inner_nonconverged += sum(not r[4].converged for r in results)
            report.iterations = k + 1
            z, cons = z_new, cons_new

            score = residual_score(res, cfg)
            if score <= best_score:
                best_score = score
                best = (list(z), cons, [dd.copy() for dd in duals])
            if check_termination(res, cfg):
                report.converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    if not report.converged and best is not None:
        z, cons, duals = best
    report.state = SolverState(list(z), cons, duals)
    tree = ControlTree(
        horizon=H,
        branches=tuple(z),
        consensus=cons,
        weights=tuple(b.weight for b in problem.branches),
        labels=tuple(b.label for b in problem.branches),
    )
    return tree, report


def _solve_fused(problem: TreeProblem, z, cons, duals, cfg: SolverConfig):
    H_, T, d = problem.horizon, problem.horizon.total_steps, problem.var_dim
    L = H_.trunk_steps
    N = problem.n_branches
    H, f, c0, A, b, mask, p = pack(problem)
    m = b.shape[1]
    Z = np.ascontiguousarray(np.stack([zi.ravel() for zi in z]))
    cons_flat = np.ascontiguousarray(cons.ravel())
    lam = np.zeros((N, m))
    for s, dd in enumerate(duals):
        lam[s, : dd.lam.size] = dd.lam
    eta = np.ascontiguousarray(np.stack([dd.eta.ravel() for dd in duals]))
    nc = cfg.newton
    t0 = time.perf_counter()
    iters, converged, hist, stats, failed = fused_solve(
        H, f, c0, A, b, mask, p, Z, cons_flat, lam, eta, L, d,
        cfg.mu, cfg.rho, cfg.eps_pri, cfg.eps_dual, cfg.xi_pri, cfg.xi_dual,
        cfg.max_outer_iters, cfg.literal_indicator,
        nc.max_inner_iters, nc.grad_tol, nc.backtrack, nc.armijo, nc.damping_floor,
        nc.min_step, nc.step_tol,
    )
    elapsed = time.perf_counter() - t0
    if failed:
        raise SolverError(f"inner minimization failed at outer iteration {failed}")
    report = SolveReport(
        iterations=int(iters),
        converged=bool(converged),
        history=[Residuals(*map(float, row)) for row in hist],
        phase_times=[(float("nan"), float("nan"))] * int(iters),
        newton_steps=[int(x) for x in stats[:, 0]],
        factorizations=[int(x) for x in stats[:, 1]],
        evaluations=[int(x) for x in stats[:, 2]],
        inner_nonconverged=int(stats[:, 3].sum()),
        elapsed=elapsed,
    )
    z_out = [Z[s].reshape(T, d).copy() for s in range(N)]
    cons_out = cons_flat.reshape(L, d).copy()
    duals_out = [
        DualState(lam[s, : br.ineq.dim].copy(), np.zeros(0), eta[s].reshape(L, d).copy())
        for s, br in enumerate(problem.branches)
    ]
    report.state = SolverState(z_out, cons_out, duals_out)
    tree = ControlTree(
        horizon=H_,
        branches=tuple(z_out),
        consensus=cons_out,
        weights=tuple(br.weight for br in problem.branches),
        labels=tuple(br.label for br in problem.branches),
    )
    return tree, report
