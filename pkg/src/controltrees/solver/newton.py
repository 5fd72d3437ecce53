"""Damped Newton minimization of a branch Lagrangian."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..tree import BranchProblem
from .config import NewtonConfig, SolverConfig
from .lagrangian import BranchLagrangian, DualState


class EvaluationError(FloatingPointError):
    pass


@dataclass
class InnerResult:
    z: np.ndarray
    converged: bool
    iterations: int
    evaluations: int
    factorizations: int
    grad_norm: float


def _to_banded(H: np.ndarray, u: int) -> np.ndarray:
    n = H.shape[0]
    ab = np.zeros((u + 1, n))
    for k in range(u + 1):
        ab[u - k, k:] = np.diagonal(H, k)
    return ab


def newton_direction(H: np.ndarray, g: np.ndarray, cfg: NewtonConfig,
                     bandwidth: int | None = None) -> tuple[np.ndarray, int]:
    """Solve ``(H + damping I) s = -g`` by Cholesky, raising damping until it factors.

    Returns the step and the number of factorization attempts.
    """
    n = g.size
    scale = max(1.0, float(np.abs(np.diagonal(H)).max())) if n else 1.0
    damping = cfg.damping_floor
    attempts = 0
    banded = bandwidth is not None and bandwidth < n - 1
    while True:
        attempts += 1
        try:
            if banded:
                ab = _to_banded(H, bandwidth)
                ab[bandwidth] += damping
                cb = linalg.cholesky_banded(ab, check_finite=False)
                return linalg.cho_solve_banded((cb, False), -g, check_finite=False), attempts
            Hd = H.copy()
            Hd.flat[:: n + 1] += damping
            c = linalg.cho_factor(Hd, check_finite=False)
            return linalg.cho_solve(c, -g, check_finite=False), attempts
        except linalg.LinAlgError:
            if attempts > 40:
                raise EvaluationError("curvature could not be regularized")
            damping = max(10.0 * damping, 1e-8 * scale)


def minimize(lag: BranchLagrangian, z0: np.ndarray, cfg: NewtonConfig,
             bandwidth: int | None = None) -> InnerResult:
    """Newton / Gauss-Newton with Armijo backtracking on a flat variable vector."""
    z = np.array(z0, dtype=float).ravel()
    val, g, H = lag.derivatives(z)
    if not (np.isfinite(val) and np.all(np.isfinite(g))):
        raise EvaluationError("non-finite Lagrangian at the initial point")
    factorizations = 0
    converged = False
    it = 0
    gnorm = float(np.abs(g).max()) if g.size else 0.0
    while it < cfg.max_inner_iters:
        if gnorm <= cfg.grad_tol:
            converged = True
            break
        it += 1
        step, k = newton_direction(H, g, cfg, bandwidth)
        factorizations += k
        slope = float(g @ step)
        if slope >= 0.0:
            step = -g
            slope = float(g @ step)
        smax = float(np.abs(step).max())
        alpha = 1.0
        while True:
            z_try = z + alpha * step
            v_try = lag.value(z_try)
            if np.isfinite(v_try) and v_try <= val + cfg.armijo * alpha * slope:
                break
            alpha *= cfg.backtrack
            if alpha * smax < cfg.min_step:
                z_try = None
                break
        if z_try is None:
            # no decrease possible at machine precision; keep the current iterate
            break
        z = z_try
        val, g, H = lag.derivatives(z)
        if not (np.isfinite(val) and np.isfinite(g).all()):
            raise EvaluationError("non-finite Lagrangian during Newton iterations")
        gnorm = float(np.abs(g).max())
        if alpha == 1.0 and smax <= cfg.step_tol:
            converged = True
            break
    else:
        converged = gnorm <= cfg.grad_tol
    return InnerResult(z, converged, it, lag.evaluations, factorizations, gnorm)


def solve_branch_subproblem(branch: BranchProblem, z_init, consensus, duals: DualState,
                            cfg: SolverConfig) -> InnerResult:
    """Minimize the branch Lagrangian from ``z_init``; ``z`` is returned as ``T x d``."""
    if branch.kernel is not None:
        return branch.kernel.minimize(z_init, branch.cost_weight, duals, consensus, cfg)
    lag = BranchLagrangian(branch, consensus, duals, cfg)
    res = minimize(lag, np.asarray(z_init, dtype=float), cfg.newton, branch.bandwidth)
    res.z = res.z.reshape(branch.steps, branch.dim)
    return res
