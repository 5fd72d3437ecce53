"""Compiled outer loop for trees whose branches are all dense QPs.

Same algorithm as :func:`controltrees.solver.dal.solve` (same Newton line
search, multiplier updates, consensus average and termination test), run
end-to-end in machine code. Used for the condensed ACC problems, where the
per-call overhead of the generic path dominates.

Branch constraint blocks are padded to a common row count with rows
``0 z - 1 <= 0``; these are never active and their multipliers stay zero.
"""

from __future__ import annotations

import numpy as np
import numba as nb

from ..terms import LinearConstraint, QuadraticCost
from ..tree import TreeProblem


def is_fusable(problem: TreeProblem) -> bool:
    for b in problem.branches:
        if type(b.cost) is not QuadraticCost or type(b.ineq) is not LinearConstraint:
            return False
        if type(b.eq) is not LinearConstraint or b.eq.dim:
            return False
        if not isinstance(b.ineq.A, np.ndarray):
            return False
    return True


def pack(problem: TreeProblem):
    """Stack branch data into padded arrays."""
    N = problem.n_branches
    n = problem.branches[0].size
    m = max(1, max(b.ineq.dim for b in problem.branches))
    H = np.empty((N, n, n))
    f = np.empty((N, n))
    c0 = np.empty(N)
    A = np.zeros((N, m, n))
    b = np.ones((N, m))
    mask = np.zeros((N, m), dtype=np.bool_)
    p = np.empty(N)
    for s, br in enumerate(problem.branches):
        H[s] = br.cost.hessian
        f[s] = br.cost.linear
        c0[s] = br.cost.constant
        k = br.ineq.dim
        A[s, :k] = br.ineq.A
        b[s, :k] = br.ineq.b
        mask[s, :k] = True
        p[s] = br.cost_weight
    return H, f, c0, A, b, mask, p


@nb.njit(cache=True)
def _cholesky(M, out):
    n = M.shape[0]
    for j in range(n):
        d = M[j, j]
        for k in range(j):
            d -= out[j, k] * out[j, k]
        if not d > 0.0:
            return False
        d = np.sqrt(d)
        out[j, j] = d
        for i in range(j + 1, n):
            s = M[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            out[i, j] = s / d
    return True


@nb.njit(cache=True)
def _cho_solve(Lf, rhs, out):
    n = rhs.size
    for i in range(n):
        s = rhs[i]
        for k in range(i):
            s -= Lf[i, k] * out[k]
        out[i] = s / Lf[i, i]
    for i in range(n - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, n):
            s -= Lf[k, i] * out[k]
        out[i] = s / Lf[i, i]


@nb.njit(cache=True)
def _lagrangian(z, H, f, c0, A, b, p, lam, eta, cons, mu, rho, literal, want_derivs,
                grad, hess):
    """Value of the branch Lagrangian; fills ``grad``/``hess`` when asked."""
    n = z.size
    nt = cons.size
    m = b.size
    Hz = H @ z
    val = p * (0.5 * (z @ Hz) + f @ z + c0)
    g = A @ z - b
    w = np.empty(m)
    for i in range(m):
        act = g[i] > 0.0 or (not literal and lam[i] > 0.0)
        ga = g[i] if act else 0.0
        val += lam[i] * g[i] + mu * ga * ga
        w[i] = lam[i] + 2.0 * mu * ga
    for i in range(nt):
        dz = z[i] - cons[i]
        val += eta[i] * dz + 0.5 * rho * dz * dz
    if want_derivs:
        for i in range(n):
            grad[i] = p * (Hz[i] + f[i])
            for j in range(n):
                hess[i, j] = p * H[i, j]
        grad += A.T @ w
        for r in range(m):
            act = g[r] > 0.0 or (not literal and lam[r] > 0.0)
            if act:
                for i in range(n):
                    a = 2.0 * mu * A[r, i]
                    if a != 0.0:
                        for j in range(n):
                            hess[i, j] += a * A[r, j]
        for i in range(nt):
            grad[i] += eta[i] + rho * (z[i] - cons[i])
            hess[i, i] += rho
    return val


@nb.njit(cache=True)
def _newton(z0, H, f, c0, A, b, p, lam, eta, cons, mu, rho, literal,
            max_it, grad_tol, backtrack, armijo, damping_floor, min_step, step_tol):
    n = z0.size
    z = z0.copy()
    grad = np.empty(n)
    hess = np.empty((n, n))
    Lf = np.zeros((n, n))
    Hd = np.empty((n, n))
    step = np.empty(n)
    val = _lagrangian(z, H, f, c0, A, b, p, lam, eta, cons, mu, rho, literal, True, grad, hess)
    evals = 1
    facts = 0
    gnorm = np.abs(grad).max() if n else 0.0
    it = 0
    converged = False
    ok = True
    while it < max_it:
        if gnorm <= grad_tol:
            converged = True
            break
        it += 1
        scale = max(1.0, np.abs(np.diag(hess)).max())
        damping = damping_floor
        attempts = 0
        while True:
            attempts += 1
            Hd[:, :] = hess
            for i in range(n):
                Hd[i, i] += damping
            if _cholesky(Hd, Lf):
                break
            if attempts > 40:
                ok = False
                break
            damping = max(10.0 * damping, 1e-8 * scale)
        facts += attempts
        if not ok:
            break
        _cho_solve(Lf, -grad, step)
        slope = grad @ step
        if slope >= 0.0:
            step[:] = -grad
            slope = grad @ step
        smax = np.abs(step).max()
        alpha = 1.0
        found = True
        while True:
            z_try = z + alpha * step
            v_try = _lagrangian(z_try, H, f, c0, A, b, p, lam, eta, cons, mu, rho, literal,
                                False, grad, hess)
            evals += 1
            if np.isfinite(v_try) and v_try <= val + armijo * alpha * slope:
                break
            alpha *= backtrack
            if alpha * smax < min_step:
                found = False
                break
        if not found:
            break
        z = z_try
        val = _lagrangian(z, H, f, c0, A, b, p, lam, eta, cons, mu, rho, literal, True, grad, hess)
        evals += 1
        if not np.isfinite(val):
            ok = False
            break
        gnorm = np.abs(grad).max()
        if alpha == 1.0 and smax <= step_tol:
            converged = True
            break
    else:
        converged = gnorm <= grad_tol
    return z, converged, it, evals, facts, ok


@nb.njit(cache=True)
def fused_solve(H, f, c0, A, b, mask, p, Z, cons, lam, eta, L, d,
                mu, rho, eps_pri, eps_dual, xi_pri, xi_dual, max_outer, literal,
                max_it, grad_tol, backtrack, armijo, damping_floor, min_step, step_tol):
    """Outer loop; ``Z`` (N, n), ``cons`` (L*d,), ``lam`` (N, m), ``eta`` (N, L*d) are updated in place.

    Returns ``(iterations, converged, history (k, 4), stats (k, 4), failed_at)``
    with stats columns Newton steps, factorizations, evaluations and inner
    non-convergences. ``failed_at`` is the 1-based outer iteration of a
    failed inner solve, or 0.
    """
    N, n = Z.shape
    nt = L * d
    hist = np.zeros((max_outer, 4))
    stats = np.zeros((max_outer, 4), dtype=np.int64)
    best_score = np.inf
    best_Z = Z.copy()
    best_cons = cons.copy()
    best_lam = lam.copy()
    best_eta = eta.copy()
    Z_new = np.empty_like(Z)
    converged = False
    iters = 0
    for k in range(max_outer):
        aula_p = 0.0
        aula_d = 0.0
        for s in range(N):
            z, inner_ok, it, ev, fa, ok = _newton(
                Z[s], H[s], f[s], c0[s], A[s], b[s], p[s], lam[s], eta[s], cons, mu, rho,
                literal, max_it, grad_tol, backtrack, armijo, damping_floor, min_step, step_tol)
            if not ok:
                return k, False, hist[:k], stats[:k], k + 1
            Z_new[s] = z
            g = A[s] @ z - b[s]
            viol = 0.0
            for i in range(g.size):
                lam[s, i] = max(0.0, lam[s, i] + 2.0 * mu * g[i])
                if mask[s, i] and g[i] > viol:
                    viol = g[i]
            aula_p = max(aula_p, viol)
            if n:
                aula_d = max(aula_d, np.abs(z - Z[s]).max())
            stats[k, 0] += it
            stats[k, 1] += fa
            stats[k, 2] += ev
            stats[k, 3] += 0 if inner_ok else 1
        cons_new = Z_new[0, :nt].copy()
        for s in range(1, N):
            cons_new += Z_new[s, :nt]
        cons_new /= N
        admm_p = 0.0
        for s in range(N):
            diff = Z_new[s, :nt] - cons_new
            eta[s] += rho * diff
            admm_p = max(admm_p, np.abs(diff).max())
        admm_d = np.abs(cons_new - cons).max()
        hist[k, 0] = aula_p
        hist[k, 1] = aula_d
        hist[k, 2] = admm_p
        hist[k, 3] = admm_d
        Z[:, :] = Z_new
        cons[:] = cons_new
        iters = k + 1
        score = max(aula_p / eps_pri, aula_d / eps_dual, admm_p / xi_pri, admm_d / xi_dual)
        if score <= best_score:
            best_score = score
            best_Z[:, :] = Z
            best_cons[:] = cons
            best_lam[:, :] = lam
            best_eta[:, :] = eta
        if aula_p <= eps_pri and aula_d <= eps_dual and admm_p <= xi_pri and admm_d <= xi_dual:
            converged = True
            break
    if not converged:
        Z[:, :] = best_Z
        cons[:] = best_cons
        lam[:, :] = best_lam
        eta[:, :] = best_eta
    return iters, converged, hist[:iters], stats[:iters], 0
