"""Compiled inner solver for slalom branches.

Evaluates the same branch Lagrangian as the generic terms in
:mod:`controltrees.slalom` (residual rows touch at most five variables, so
the Gauss-Newton curvature is accumulated row by row) and runs the same
damped Newton / Armijo loop as :func:`controltrees.solver.newton.minimize`,
with a Cholesky factorization restricted to the pose bandwidth.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from .solver.newton import EvaluationError, InnerResult

_PI = math.pi


@nb.njit(cache=True, nogil=True)
def _wrap(a):
    w = (a + _PI) % (2.0 * _PI) - _PI
    return _PI if w == -_PI else w


@nb.njit(cache=True, nogil=True)
def _add_row(val_r, idx, jv, cnt, wgrad, whess, grad, hess, want):
    """grad += wgrad * J_row; hess += whess * J_row' J_row."""
    if not want:
        return
    for a in range(cnt):
        grad[idx[a]] += wgrad * jv[a]
    if whess != 0.0:
        for a in range(cnt):
            for b in range(cnt):
                hess[idx[a], idx[b]] += whess * jv[a] * jv[b]


@nb.njit(cache=True, nogil=True)
def slalom_lagrangian(z, want, grad, hess, q_cur, q_prev, dt, w_acc, w_center, w_speed,
                      v_des, y_c, literal_nh, centers, reach, p, lam, kappa, eta, cons,
                      mu, nu, rho, literal_ind):
    T = z.size // 3
    n = z.size
    if want:
        for i in range(n):
            grad[i] = 0.0
            for j in range(n):
                hess[i, j] = 0.0
    idx = np.empty(5, dtype=np.int64)
    jv = np.empty(5)
    sa = math.sqrt(w_acc) / (dt * dt)
    sc = math.sqrt(w_center)
    ss = math.sqrt(w_speed)
    val = 0.0
    # differences D_i = Q_{i+1} - Q_i with Q = [q_prev, q_cur, z_0, ...]
    D = np.empty((T + 1, 3))
    for c in range(3):
        D[0, c] = q_cur[c] - q_prev[c]
        D[1, c] = z[c] - q_cur[c]
        for t in range(1, T):
            D[t + 1, c] = z[3 * t + c] - z[3 * (t - 1) + c]
    for i in range(T + 1):
        D[i, 2] = _wrap(D[i, 2])
    for t in range(T):
        # acceleration rows
        for c in range(3):
            r = sa * (D[t + 1, c] - D[t, c])
            cnt = 0
            idx[cnt] = 3 * t + c
            jv[cnt] = sa
            cnt += 1
            if t >= 1:
                idx[cnt] = 3 * (t - 1) + c
                jv[cnt] = -2.0 * sa
                cnt += 1
            if t >= 2:
                idx[cnt] = 3 * (t - 2) + c
                jv[cnt] = sa
                cnt += 1
            val += p * r * r
            _add_row(r, idx, jv, cnt, 2.0 * p * r, 2.0 * p, grad, hess, want)
        # centerline
        r = sc * (z[3 * t + 1] - y_c)
        idx[0] = 3 * t + 1
        jv[0] = sc
        val += p * r * r
        _add_row(r, idx, jv, 1, 2.0 * p * r, 2.0 * p, grad, hess, want)
        # speed
        vx = D[t + 1, 0] / dt
        vy = D[t + 1, 1] / dt
        sp = math.hypot(vx, vy)
        r = ss * (sp - v_des)
        ux = vx / sp if sp > 1e-12 else 0.0
        uy = vy / sp if sp > 1e-12 else 0.0
        k = ss / dt
        idx[0] = 3 * t
        jv[0] = k * ux
        idx[1] = 3 * t + 1
        jv[1] = k * uy
        cnt = 2
        if t >= 1:
            idx[2] = 3 * (t - 1)
            jv[2] = -k * ux
            idx[3] = 3 * (t - 1) + 1
            jv[3] = -k * uy
            cnt = 4
        val += p * r * r
        _add_row(r, idx, jv, cnt, 2.0 * p * r, 2.0 * p, grad, hess, want)
        # no-slip equality
        th = z[3 * t + 2]
        s = math.sin(th)
        co = math.cos(th)
        if literal_nh:
            h = vx * co - vy * s
            gx, gy, gth = co / dt, -s / dt, -vx * s - vy * co
        else:
            h = vx * s - vy * co
            gx, gy, gth = s / dt, -co / dt, vx * co + vy * s
        idx[0] = 3 * t
        jv[0] = gx
        idx[1] = 3 * t + 1
        jv[1] = gy
        idx[2] = 3 * t + 2
        jv[2] = gth
        cnt = 3
        if t >= 1:
            idx[3] = 3 * (t - 1)
            jv[3] = -gx
            idx[4] = 3 * (t - 1) + 1
            jv[4] = -gy
            cnt = 5
        kap = kappa[t]
        val += kap * h + nu * h * h
        _add_row(h, idx, jv, cnt, kap + 2.0 * nu * h, 2.0 * nu, grad, hess, want)
    # clearance inequalities, obstacle-major rows
    K = reach.size
    for j in range(K):
        for t in range(T):
            dx = z[3 * t] - centers[j, 0]
            dy = z[3 * t + 1] - centers[j, 1]
            r = math.hypot(dx, dy)
            g = reach[j] - r
            if r == 0.0:
                gx, gy = 0.0, -1.0
            else:
                gx, gy = -dx / r, -dy / r
            row = j * T + t
            lm = lam[row]
            act = g > 0.0 or (not literal_ind and lm > 0.0)
            ga = g if act else 0.0
            val += lm * g + mu * ga * ga
            idx[0] = 3 * t
            jv[0] = gx
            idx[1] = 3 * t + 1
            jv[1] = gy
            _add_row(g, idx, jv, 2, lm + 2.0 * mu * ga, 2.0 * mu if act else 0.0,
                     grad, hess, want)
    for i in range(cons.size):
        dz = z[i] - cons[i]
        val += eta[i] * dz + 0.5 * rho * dz * dz
        if want:
            grad[i] += eta[i] + rho * dz
            hess[i, i] += rho
    return val


@nb.njit(cache=True, nogil=True)
def _band_cholesky(M, u, out):
    n = M.shape[0]
    for j in range(n):
        k0 = max(0, j - u)
        d = M[j, j]
        for k in range(k0, j):
            d -= out[j, k] * out[j, k]
        if not d > 0.0:
            return False
        d = math.sqrt(d)
        out[j, j] = d
        for i in range(j + 1, min(n, j + u + 1)):
            s = M[i, j]
            for k in range(max(0, i - u), j):
                s -= out[i, k] * out[j, k]
            out[i, j] = s / d
    return True


@nb.njit(cache=True, nogil=True)
def _band_solve(Lf, u, rhs, out):
    n = rhs.size
    for i in range(n):
        s = rhs[i]
        for k in range(max(0, i - u), i):
            s -= Lf[i, k] * out[k]
        out[i] = s / Lf[i, i]
    for i in range(n - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, min(n, i + u + 1)):
            s -= Lf[k, i] * out[k]
        out[i] = s / Lf[i, i]


@nb.njit(cache=True, nogil=True)
def slalom_newton(z0, u, q_cur, q_prev, dt, w_acc, w_center, w_speed, v_des, y_c, literal_nh,
                  centers, reach, p, lam, kappa, eta, cons, mu, nu, rho, literal_ind,
                  max_it, grad_tol, backtrack, armijo, damping_floor, min_step, step_tol):
    """Damped Gauss-Newton with Armijo backtracking; mirrors the generic inner loop.

    Returns ``(z, converged, iterations, evaluations, factorizations, grad_norm, status)``
    with status 0 on success, 1 for a non-finite Lagrangian and 2 when the
    curvature could not be regularized.
    """
    n = z0.size
    z = z0.copy()
    grad = np.empty(n)
    hess = np.empty((n, n))
    Lf = np.zeros((n, n))
    Hd = np.empty((n, n))
    step = np.empty(n)
    val = slalom_lagrangian(z, True, grad, hess, q_cur, q_prev, dt, w_acc, w_center, w_speed,
                            v_des, y_c, literal_nh, centers, reach, p, lam, kappa, eta, cons,
                            mu, nu, rho, literal_ind)
    evals = 1
    facts = 0
    if not np.isfinite(val) or not np.all(np.isfinite(grad)):
        return z, False, 0, evals, facts, np.inf, 1
    gnorm = np.abs(grad).max()
    it = 0
    converged = False
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
            if _band_cholesky(Hd, u, Lf):
                break
            if attempts > 40:
                return z, False, it, evals, facts + attempts, gnorm, 2
            damping = max(10.0 * damping, 1e-8 * scale)
        facts += attempts
        _band_solve(Lf, u, -grad, step)
        slope = grad @ step
        if slope >= 0.0:
            step[:] = -grad
            slope = grad @ step
        smax = np.abs(step).max()
        alpha = 1.0
        found = True
        while True:
            z_try = z + alpha * step
            v_try = slalom_lagrangian(z_try, False, grad, hess, q_cur, q_prev, dt, w_acc,
                                      w_center, w_speed, v_des, y_c, literal_nh, centers,
                                      reach, p, lam, kappa, eta, cons, mu, nu, rho, literal_ind)
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
        val = slalom_lagrangian(z, True, grad, hess, q_cur, q_prev, dt, w_acc, w_center,
                                w_speed, v_des, y_c, literal_nh, centers, reach, p, lam, kappa,
                                eta, cons, mu, nu, rho, literal_ind)
        evals += 1
        if not np.isfinite(val) or not np.all(np.isfinite(grad)):
            return z, False, it, evals, facts, np.inf, 1
        gnorm = np.abs(grad).max()
        if alpha == 1.0 and smax <= step_tol:
            converged = True
            break
    else:
        converged = gnorm <= grad_tol
    return z, converged, it, evals, facts, gnorm, 0


class SlalomKernel:
    """Compiled branch minimizer bound to one slalom branch's data."""

    def __init__(self, q_cur, q_prev, params, horizon, obstacles, bandwidth: int):
        self.q_cur = np.ascontiguousarray(q_cur, dtype=float)
        self.q_prev = np.ascontiguousarray(q_prev, dtype=float)
        self.params = params
        self.dt = float(horizon.dt)
        self.T = horizon.total_steps
        self.centers = np.array([o.center for o in obstacles], dtype=float).reshape(-1, 2)
        self.reach = np.array([o.radius + params.d_avoid for o in obstacles], dtype=float)
        self.bandwidth = bandwidth

    def _args(self, weight, lam, kappa, eta, cons, cfg):
        p = self.params
        return (self.q_cur, self.q_prev, self.dt, p.w_acc, p.w_center, p.w_speed,
                p.v_desired, p.y_center, p.literal_nonholonomic, self.centers, self.reach,
                weight, np.ascontiguousarray(lam, dtype=float),
                np.ascontiguousarray(kappa, dtype=float),
                np.ascontiguousarray(eta, dtype=float).ravel(),
                np.ascontiguousarray(cons, dtype=float).ravel(),
                cfg.mu, cfg.nu, cfg.rho, cfg.literal_indicator)

    def lagrangian(self, z, weight, duals, consensus, cfg):
        """``(value, grad, hess)`` at flat ``z``, for cross-checks against the generic terms."""
        n = z.size
        grad = np.empty(n)
        hess = np.empty((n, n))
        val = slalom_lagrangian(np.ascontiguousarray(z, dtype=float), True, grad, hess,
                                *self._args(weight, duals.lam, duals.kappa, duals.eta,
                                            consensus, cfg))
        return val, grad, hess

    def minimize(self, z_init, weight, duals, consensus, cfg) -> InnerResult:
        nc = cfg.newton
        z0 = np.ascontiguousarray(z_init, dtype=float).ravel()
        z, conv, it, ev, fa, gnorm, status = slalom_newton(
            z0, self.bandwidth, *self._args(weight, duals.lam, duals.kappa, duals.eta,
                                            consensus, cfg),
            nc.max_inner_iters, nc.grad_tol, nc.backtrack, nc.armijo, nc.damping_floor,
            nc.min_step, nc.step_tol)
        if status == 1:
            raise EvaluationError("non-finite Lagrangian during Newton iterations")
        if status == 2:
            raise EvaluationError("curvature could not be regularized")
        return InnerResult(z.reshape(self.T, 3), bool(conv), int(it), int(ev), int(fa),
                           float(gnorm))
