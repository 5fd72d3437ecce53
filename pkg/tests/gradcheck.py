"""Randomized analytic-versus-finite-difference derivative checks.

Each case draws a random evaluation point and returns the relative error
between the analytic derivative and a central difference of the value.
"""

from __future__ import annotations

import numpy as np

from controltrees.acc import AccCostParams, CarState, condense_branch
from controltrees.slalom import (
    ClearanceConstraint,
    NonholonomicConstraint,
    ObstacleHyp,
    SlalomCost,
    SlalomCostParams,
    build_slalom_branch,
    clearance_gradient,
    nonholonomic_jacobian,
    nonholonomic_residual,
    obstacle_clearance,
    straight_rollout,
)
from controltrees.solver import SolverConfig
from controltrees.solver.lagrangian import BranchLagrangian, DualState
from controltrees.terms import HingePenalty, LinearConstraint, QuadraticCost
from controltrees.tree import HorizonSpec

from oracles import central_gradient, central_jacobian, relative_error

H = HorizonSpec()


def _poses(rng, T=H.total_steps):
    """A jittered straight drive: plausible poses with small headings."""
    q_cur = np.array([rng.uniform(-5, 5), rng.uniform(-1, 1), rng.uniform(-0.3, 0.3)])
    speed = rng.uniform(5.0, 12.0)
    q_prev = q_cur - H.dt * np.array([speed * np.cos(q_cur[2]), speed * np.sin(q_cur[2]), 0.0])
    z = straight_rollout(q_cur, q_prev, H)[:T]
    z[:, :2] += rng.normal(scale=0.3, size=(T, 2))
    z[:, 2] += rng.normal(scale=0.1, size=T)
    return q_cur, q_prev, z


def _obstacles(rng, z, count):
    out = []
    for i in range(count):
        t = rng.integers(0, z.shape[0])
        c = z[t, :2] + rng.uniform(-2.0, 2.0, size=2)
        out.append(ObstacleHyp(tuple(c), rng.uniform(0.3, 0.8), rng.uniform(0.05, 0.95), ident=i))
    return out


def _slalom_params(rng):
    return SlalomCostParams(w_acc=rng.uniform(0.1, 2), w_center=rng.uniform(0.05, 1),
                            w_speed=rng.uniform(0.1, 2), v_desired=rng.uniform(5, 12),
                            y_center=rng.uniform(-1, 1),
                            literal_nonholonomic=bool(rng.integers(2)))


def _random_duals(rng, branch, L):
    lam = np.where(rng.random(branch.ineq.dim) < 0.5, rng.uniform(0, 2, branch.ineq.dim), 0.0)
    return DualState(lam, rng.normal(size=branch.eq.dim), rng.normal(size=(L, branch.dim)))


def _solver_cfg(rng):
    return SolverConfig(mu=rng.uniform(0.5, 20), nu=rng.uniform(0.5, 20), rho=rng.uniform(0.5, 30),
                        literal_indicator=bool(rng.integers(2)))


def case_quadratic(rng):
    n = int(rng.integers(1, 30))
    M = rng.normal(size=(n, n))
    c = QuadraticCost(M @ M.T, rng.normal(size=n), rng.normal())
    z = rng.normal(size=n)
    return relative_error(c.derivatives(z)[1], central_gradient(c.value, z))


def case_hinge(rng):
    n, m = int(rng.integers(1, 20)), int(rng.integers(1, 20))
    con = LinearConstraint(rng.normal(size=(m, n)), rng.normal(size=m))
    c = HingePenalty(con, rng.uniform(0.1, 100))
    z = rng.normal(size=n)
    return relative_error(c.derivatives(z)[1], central_gradient(c.value, z))


def case_slalom_cost(rng):
    q_cur, q_prev, z = _poses(rng)
    c = SlalomCost(q_cur, q_prev, _slalom_params(rng), H)
    zf = z.ravel()
    return relative_error(c.derivatives(zf)[1], central_gradient(c.value, zf))


def case_nonholonomic(rng):
    q_cur, _, z = _poses(rng)
    con = NonholonomicConstraint(q_cur, H, literal=bool(rng.integers(2)))
    zf = z.ravel()
    return relative_error(con.derivatives(zf)[1], central_jacobian(con.value, zf))


def case_nonholonomic_pointwise(rng):
    q_t, q_tm1 = rng.normal(size=3), rng.normal(size=3)
    q_t[2] = q_tm1[2] + rng.uniform(-1, 1)
    dt, literal = rng.uniform(0.05, 0.5), bool(rng.integers(2))
    g_t, g_tm1 = nonholonomic_jacobian(q_t, q_tm1, dt, literal)
    num_t = central_gradient(lambda q: nonholonomic_residual(q, q_tm1, dt, literal), q_t)
    num_tm1 = central_gradient(lambda q: nonholonomic_residual(q_t, q, dt, literal), q_tm1)
    return max(relative_error(g_t, num_t), relative_error(g_tm1, num_tm1))


def case_clearance(rng):
    _, _, z = _poses(rng)
    obs = _obstacles(rng, z, int(rng.integers(1, 5)))
    con = ClearanceConstraint(obs, rng.uniform(0.2, 1.5), H)
    zf = z.ravel()
    return relative_error(con.derivatives(zf)[1], central_jacobian(con.value, zf))


def case_clearance_pointwise(rng):
    q = rng.normal(size=3) * 3.0
    o = ObstacleHyp(tuple(rng.normal(size=2) * 3.0), rng.uniform(0.2, 1.0), 0.5)
    d = rng.uniform(0.0, 2.0)
    num = central_gradient(lambda p: obstacle_clearance(p, o, d), q)
    return relative_error(clearance_gradient(q, o), num)


def case_acc_lagrangian(rng):
    v0 = rng.uniform(0.0, 14.0)
    params = AccCostParams()
    stop = None if rng.random() < 0.3 else rng.uniform(10, 90)
    branch = condense_branch(CarState(0.0, v0), params, stop, H, rng.uniform(0, 1))
    lag = BranchLagrangian(branch, rng.normal(size=(H.trunk_steps, 1)),
                           _random_duals(rng, branch, H.trunk_steps), _solver_cfg(rng))
    z = rng.uniform(-8, 2, size=branch.size)
    return relative_error(lag.derivatives(z)[1], central_gradient(lag.value, z))


def case_slalom_lagrangian(rng):
    q_cur, q_prev, z = _poses(rng)
    obs = _obstacles(rng, z, int(rng.integers(0, 4)))
    branch = build_slalom_branch(q_cur, q_prev, obs, _slalom_params(rng), H,
                                 rng.uniform(0, 1), compiled=False)
    lag = BranchLagrangian(branch, z[:H.trunk_steps] + rng.normal(scale=0.2, size=(H.trunk_steps, 3)),
                           _random_duals(rng, branch, H.trunk_steps), _solver_cfg(rng))
    zf = z.ravel()
    return relative_error(lag.derivatives(zf)[1], central_gradient(lag.value, zf))


def case_slalom_kernel(rng):
    """Compiled Lagrangian: gradient against its own value and against the generic terms."""
    q_cur, q_prev, z = _poses(rng)
    obs = _obstacles(rng, z, int(rng.integers(0, 4)))
    branch = build_slalom_branch(q_cur, q_prev, obs, _slalom_params(rng), H, rng.uniform(0, 1))
    cons = z[:H.trunk_steps] + rng.normal(scale=0.2, size=(H.trunk_steps, 3))
    duals = _random_duals(rng, branch, H.trunk_steps)
    cfg = _solver_cfg(rng)
    k = branch.kernel
    w = branch.cost_weight
    zf = z.ravel()
    _, grad, _ = k.lagrangian(zf, w, duals, cons, cfg)
    num = central_gradient(lambda x: k.lagrangian(x, w, duals, cons, cfg)[0], zf)
    _, ref, _ = BranchLagrangian(branch, cons, duals, cfg).derivatives(zf)
    return max(relative_error(grad, num), relative_error(grad, ref))


CASES = {
    "quadratic cost": case_quadratic,
    "hinge penalty": case_hinge,
    "slalom cost terms": case_slalom_cost,
    "non-holonomic residual": case_nonholonomic,
    "non-holonomic residual (pointwise)": case_nonholonomic_pointwise,
    "clearance": case_clearance,
    "clearance (pointwise)": case_clearance_pointwise,
    "pedestrian branch Lagrangian": case_acc_lagrangian,
    "slalom branch Lagrangian": case_slalom_lagrangian,
    "compiled slalom Lagrangian": case_slalom_kernel,
}


def run_cases(total: int, seed: int = 0) -> dict[str, float]:
    """Spread ``total`` evaluations over all cases; worst error per case."""
    rng = np.random.default_rng(seed)
    names = list(CASES)
    worst = {n: 0.0 for n in names}
    for i in range(total):
        name = names[i % len(names)]
        worst[name] = max(worst[name], CASES[name](rng))
    return worst
