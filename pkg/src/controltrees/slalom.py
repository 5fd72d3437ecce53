"""Slalom among obstacles of uncertain existence, planned in SE(2).

Decision variables are the future poses ``z_t = (x, y, theta)`` for
``t = 0..T-1`` (pose at time ``(t+1) dt``). The current and previous poses
are fixed boundary values for the finite differences. Velocities and
accelerations are backward differences with headings unwrapped between
consecutive steps.

Each branch assumes one combination of obstacle existences; costs are
least squares (acceleration, distance to the centerline, speed error), the
no-slip condition is an equality per step and every obstacle present in the
branch adds a clearance inequality per step.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .solver import NewtonConfig, SolverConfig, SolverState, solve
from .solver.warm import warm_start
from .slalom_kernel import SlalomKernel
from .terms import LeastSquaresCost, StackedConstraint
from .tree import (
    BranchProblem,
    ControlTree,
    HorizonSpec,
    Resolution,
    build_tree_problem,
    exact_distribution,
)

# (k + 1) * d - 1 for second-order differences of 3-dof poses
POSE_BANDWIDTH = 8
MAX_UNCERTAIN = 4


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    w = np.remainder(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class ObstacleHyp:
    center: tuple[float, float]
    radius: float
    existence_prob: float
    resolved: Resolution = Resolution.UNCERTAIN
    ident: Optional[int] = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")
        if not 0.0 <= self.existence_prob <= 1.0:
            raise ValueError("existence probability outside [0, 1]")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def key(self) -> str:
        return str(self.ident) if self.ident is not None else f"{self.center[0]!r}/{self.center[1]!r}"


@dataclass(frozen=True)
class SlalomCostParams:
    w_acc: float = 1.0
    w_center: float = 0.1
    w_speed: float = 0.5
    v_desired: float = 10.0
    d_avoid: float = 1.0
    y_center: float = 0.0
    literal_nonholonomic: bool = False

    def __post_init__(self):
        if min(self.w_acc, self.w_center, self.w_speed) < 0:
            raise ValueError("cost weights must be non-negative")
        if self.d_avoid < 0:
            raise ValueError("d_avoid must be non-negative")


def fd_velocity(q_t, q_tm1, dt: float) -> np.ndarray:
    d = np.asarray(q_t, dtype=float) - np.asarray(q_tm1, dtype=float)
    d[2] = wrap_angle(d[2])
    return d / dt


def fd_acceleration(q_t, q_tm1, q_tm2, dt: float) -> np.ndarray:
    return (fd_velocity(q_t, q_tm1, dt) - fd_velocity(q_tm1, q_tm2, dt)) / dt


def nonholonomic_residual(q_t, q_tm1, dt: float, literal: bool = False) -> float:
    """Body-lateral velocity ``xdot sin(theta_t) - ydot cos(theta_t)``.

    ``literal=True`` gives ``xdot cos(theta_t) - ydot sin(theta_t)`` instead.
    """
    vx, vy, _ = fd_velocity(q_t, q_tm1, dt)
    th = float(q_t[2])
    if literal:
        return vx * math.cos(th) - vy * math.sin(th)
    return vx * math.sin(th) - vy * math.cos(th)


def nonholonomic_jacobian(q_t, q_tm1, dt: float, literal: bool = False):
    """Gradients of :func:`nonholonomic_residual` w.r.t. ``q_t`` and ``q_tm1``."""
    vx, vy, _ = fd_velocity(q_t, q_tm1, dt)
    th = float(q_t[2])
    s, c = math.sin(th), math.cos(th)
    if literal:
        g_t = np.array([c / dt, -s / dt, -vx * s - vy * c])
    else:
        g_t = np.array([s / dt, -c / dt, vx * c + vy * s])
    g_tm1 = np.array([-g_t[0], -g_t[1], 0.0])
    return g_t, g_tm1


def obstacle_clearance(q, obstacle: ObstacleHyp, d_avoid: float) -> float:
    """``radius + d_avoid - distance``; feasible when <= 0."""
    dx = float(q[0]) - obstacle.center[0]
    dy = float(q[1]) - obstacle.center[1]
    return obstacle.radius + d_avoid - math.hypot(dx, dy)


def clearance_gradient(q, obstacle: ObstacleHyp) -> np.ndarray:
    dx = float(q[0]) - obstacle.center[0]
    dy = float(q[1]) - obstacle.center[1]
    r = math.hypot(dx, dy)
    if r == 0.0:
        # at the centre: push along the centerline normal
        return np.array([0.0, -1.0, 0.0])
    return np.array([-dx / r, -dy / r, 0.0])


def _pose_sequence(q_prev, q_cur, z) -> tuple[np.ndarray, np.ndarray]:
    """Unwrapped differences and the full pose stack ``[q_prev, q_cur, z...]``."""
    Q = np.vstack([q_prev, q_cur, z.reshape(-1, 3)])
    D = np.diff(Q, axis=0)
    D[:, 2] = wrap_angle(D[:, 2])
    return D, Q


@lru_cache(maxsize=16)
def _constant_jacobian(T: int, dt: float, w_acc: float, w_center: float) -> np.ndarray:
    """Rows for the acceleration and centerline residuals (both linear in z)."""
    n = 3 * T
    J = np.zeros((4 * T, n))
    sa = math.sqrt(w_acc) / (dt * dt)
    for t in range(T):
        for c in range(3):
            row = 3 * t + c
            J[row, 3 * t + c] = sa
            if t >= 1:
                J[row, 3 * (t - 1) + c] = -2.0 * sa
            if t >= 2:
                J[row, 3 * (t - 2) + c] = sa
        J[3 * T + t, 3 * t + 1] = math.sqrt(w_center)
    J.setflags(write=False)
    return J


class SlalomCost(LeastSquaresCost):
    """``sum_t w_acc |acc_t|^2 + w_center (y_t - y_c)^2 + w_speed (|v_xy,t| - v_des)^2``."""

    def __init__(self, q_cur, q_prev, params: SlalomCostParams, horizon: HorizonSpec):
        self.T = horizon.total_steps
        self.dt = float(horizon.dt)
        self.size = 3 * self.T
        self.q_cur = np.asarray(q_cur, dtype=float)
        self.q_prev = np.asarray(q_prev, dtype=float)
        self.params = params
        self._J0 = _constant_jacobian(self.T, self.dt, params.w_acc, params.w_center)
        self._t = np.arange(self.T)

    def _parts(self, z):
        p = self.params
        D, Q = _pose_sequence(self.q_prev, self.q_cur, z)
        vel = D[1:] / self.dt
        acc = (D[1:] - D[:-1]) / (self.dt * self.dt)
        speed = np.hypot(vel[:, 0], vel[:, 1])
        r = np.concatenate([
            math.sqrt(p.w_acc) * acc.ravel(),
            math.sqrt(p.w_center) * (Q[2:, 1] - p.y_center),
            math.sqrt(p.w_speed) * (speed - p.v_desired),
        ])
        return r, vel, speed

    def residuals(self, z):
        return self._parts(z)[0]

    def residual_jacobian(self, z):
        r, vel, speed = self._parts(z)
        T, t = self.T, self._t
        J = np.zeros((5 * T, 3 * T))
        J[: 4 * T] = self._J0
        safe = np.where(speed > 1e-12, speed, 1.0)
        k = math.sqrt(self.params.w_speed) / self.dt
        ux = np.where(speed > 1e-12, vel[:, 0] / safe, 0.0) * k
        uy = np.where(speed > 1e-12, vel[:, 1] / safe, 0.0) * k
        rows = 4 * T + t
        J[rows, 3 * t] = ux
        J[rows, 3 * t + 1] = uy
        J[rows[1:], 3 * t[:-1]] = -ux[1:]
        J[rows[1:], 3 * t[:-1] + 1] = -uy[1:]
        return r, J


class NonholonomicConstraint:
    """No-slip equality per step (``literal`` selects the alternate form)."""

    def __init__(self, q_cur, horizon: HorizonSpec, literal: bool = False):
        self.T = horizon.total_steps
        self.dt = float(horizon.dt)
        self.size = 3 * self.T
        self.dim = self.T
        self.q_cur = np.asarray(q_cur, dtype=float)
        self.literal = literal
        self._t = np.arange(self.T)

    def _vel(self, z):
        Z = z.reshape(-1, 3)
        prev = np.vstack([self.q_cur[None, :2], Z[:-1, :2]])
        v = (Z[:, :2] - prev) / self.dt
        return v[:, 0], v[:, 1], Z[:, 2]

    def value(self, z):
        vx, vy, th = self._vel(z)
        if self.literal:
            return vx * np.cos(th) - vy * np.sin(th)
        return vx * np.sin(th) - vy * np.cos(th)

    def derivatives(self, z):
        vx, vy, th = self._vel(z)
        s, c = np.sin(th), np.cos(th)
        dt, t = self.dt, self._t
        if self.literal:
            h = vx * c - vy * s
            gx, gy, gth = c / dt, -s / dt, -vx * s - vy * c
        else:
            h = vx * s - vy * c
            gx, gy, gth = s / dt, -c / dt, vx * c + vy * s
        J = np.zeros((self.T, self.size))
        J[t, 3 * t] = gx
        J[t, 3 * t + 1] = gy
        J[t, 3 * t + 2] = gth
        J[t[1:], 3 * t[:-1]] = -gx[1:]
        J[t[1:], 3 * t[:-1] + 1] = -gy[1:]
        return h, J


class ClearanceConstraint:
    """``radius + d_avoid - |p_t - center| <= 0`` for each obstacle and step."""

    def __init__(self, obstacles: Sequence[ObstacleHyp], d_avoid: float, horizon: HorizonSpec):
        self.T = horizon.total_steps
        self.size = 3 * self.T
        self.dim = len(obstacles) * self.T
        self.centers = np.array([o.center for o in obstacles], dtype=float).reshape(-1, 2)
        self.reach = np.array([o.radius + d_avoid for o in obstacles], dtype=float)
        self._t = np.arange(self.T)

    def _geometry(self, z):
        P = z.reshape(-1, 3)[:, :2]
        d = P[None, :, :] - self.centers[:, None, :]
        return d, np.hypot(d[..., 0], d[..., 1])

    def value(self, z):
        if not self.dim:
            return np.zeros(0)
        _, r = self._geometry(z)
        return (self.reach[:, None] - r).ravel()

    def derivatives(self, z):
        J = np.zeros((self.dim, self.size))
        if not self.dim:
            return np.zeros(0), J
        d, r = self._geometry(z)
        at_center = r == 0.0
        safe = np.where(at_center, 1.0, r)
        gx = np.where(at_center, 0.0, -d[..., 0] / safe)
        gy = np.where(at_center, -1.0, -d[..., 1] / safe)
        n_obs = self.centers.shape[0]
        rows = np.arange(self.dim).reshape(n_obs, self.T)
        J[rows, 3 * self._t[None, :]] = gx
        J[rows, 3 * self._t[None, :] + 1] = gy
        return (self.reach[:, None] - r).ravel(), J


def build_slalom_branch(q_cur, q_prev, obstacles: Sequence[ObstacleHyp],
                        params: SlalomCostParams, horizon: HorizonSpec, weight: float,
                        label: str = "", compiled: bool = True) -> BranchProblem:
    """Branch problem over the ``T`` future poses, avoiding ``obstacles``.

    ``compiled`` attaches the machine-code inner solver; without it the
    solver evaluates the Python terms directly.
    """
    q_cur = np.asarray(q_cur, dtype=float)
    q_prev = np.asarray(q_prev, dtype=float)
    if q_cur.shape != (3,) or q_prev.shape != (3,):
        raise ValueError("boundary poses must be (x, y, theta)")
    n = 3 * horizon.total_steps
    return BranchProblem(
        weight=weight,
        cost=SlalomCost(q_cur, q_prev, params, horizon),
        steps=horizon.total_steps,
        dim=3,
        ineq=StackedConstraint([ClearanceConstraint(obstacles, params.d_avoid, horizon)], n),
        eq=NonholonomicConstraint(q_cur, horizon, params.literal_nonholonomic),
        bandwidth=POSE_BANDWIDTH,
        label=label,
        kernel=SlalomKernel(q_cur, q_prev, params, horizon, obstacles, POSE_BANDWIDTH)
        if compiled else None,
    )


def existence_weights(probs: Sequence[float]) -> list[tuple[tuple[bool, ...], float]]:
    """All existence combinations (present first) with their exact product weights."""
    combos = list(itertools.product((True, False), repeat=len(probs)))
    fr = [Fraction(float(p)) for p in probs]
    exact = []
    for combo in combos:
        w = Fraction(1)
        for present, p in zip(combo, fr):
            w *= p if present else 1 - p
        exact.append(w)
    return list(zip(combos, exact_distribution(exact)))


def straight_rollout(q_cur, q_prev, horizon: HorizonSpec, speed: Optional[float] = None) -> np.ndarray:
    q_cur = np.asarray(q_cur, dtype=float)
    if speed is None:
        speed = float(np.hypot(*(q_cur[:2] - np.asarray(q_prev, dtype=float)[:2]))) / horizon.dt
    t = horizon.dt * np.arange(1, horizon.total_steps + 1)
    th = q_cur[2]
    return np.column_stack([
        q_cur[0] + speed * t * math.cos(th),
        q_cur[1] + speed * t * math.sin(th),
        np.full(t.size, th),
    ])


def slalom_hypotheses(obstacles: Sequence[ObstacleHyp], max_uncertain: int = MAX_UNCERTAIN):
    """``(present_obstacles, weight, label)`` per existence combination."""
    certain = [o for o in obstacles if o.resolved is Resolution.TRUE]
    uncertain = [o for o in obstacles if o.resolved is Resolution.UNCERTAIN]
    if len(uncertain) > max_uncertain:
        raise ValueError(
            f"{len(uncertain)} uncertain obstacles exceed the cap of {max_uncertain}"
        )
    out = []
    for combo, w in existence_weights([o.existence_prob for o in uncertain]):
        present = [o for o, on in zip(uncertain, combo) if on]
        out.append((certain + present, w, _label(present)))
    return out


def _label(present: Sequence[ObstacleHyp]) -> str:
    return "present:" + ",".join(sorted(o.key for o in present))


def build_slalom_problem(q_cur, q_prev, obstacles, params: SlalomCostParams,
                         horizon: HorizonSpec, max_uncertain: int = MAX_UNCERTAIN,
                         compiled: bool = True):
    branches = [
        build_slalom_branch(q_cur, q_prev, present, params, horizon, w, label, compiled)
        for present, w, label in slalom_hypotheses(obstacles, max_uncertain)
    ]
    return build_tree_problem(branches, horizon)


# penalties scaled to the pose cost (acceleration residuals carry 1/dt^2)
SLALOM_SOLVER_CONFIG = SolverConfig(mu=10.0, nu=10.0, rho=30.0,
                                    newton=NewtonConfig(step_tol=1e-5))


def plan_slalom(q_cur, q_prev, obstacles: Sequence[ObstacleHyp],
                params: SlalomCostParams = SlalomCostParams(),
                horizon: HorizonSpec = HorizonSpec(), cfg: Optional[SolverConfig] = None,
                max_uncertain: int = MAX_UNCERTAIN,
                warm: Optional[tuple[ControlTree, SolverState, float]] = None,
                workers: int = 1, multistart: bool = True):
    """Plan a pose tree; ``tree.consensus[0]`` is the next pose to reach.

    With ``multistart`` a second solve starts from :func:`corridor_init`
    and the better of the two solutions (by :func:`_merit`) is returned.
    """
    cfg = SLALOM_SOLVER_CONFIG if cfg is None else cfg
    q_cur = np.asarray(q_cur, dtype=float)
    q_prev = np.asarray(q_prev, dtype=float)
    problem = build_slalom_problem(q_cur, q_prev, obstacles, params, horizon, max_uncertain)
    z0 = c0 = d0 = None
    if warm is not None:
        z0, c0, d0 = warm_start(problem, *warm, extrapolate=True)
        if z0 is not None:
            z0 = [_rebase_headings(z, q_cur) for z in z0]
    if z0 is None:
        init = straight_rollout(q_cur, q_prev, horizon)
        z0 = [init] * problem.n_branches
    best = solve(problem, z0, c0, cfg, d0, workers=workers)
    if not multistart:
        return best
    # a second start on the near side of each obstacle guards against the
    # warm start staying in a poor homotopy class after a reveal
    hyps = slalom_hypotheses(obstacles, max_uncertain)
    alt_z0 = [corridor_init(q_cur, q_prev, present, params, horizon) for present, _, _ in hyps]
    alt = solve(problem, alt_z0, None, cfg, None, workers=workers)
    if _merit(problem, alt[0]) < _merit(problem, best[0]):
        return alt
    return best


# clearance added to the avoidance radius when placing corridor waypoints (m)
CORRIDOR_MARGIN = 0.3
# longitudinal distance over which a corridor detour ramps in and out (m)
CORRIDOR_RAMP = 10.0


def corridor_init(q_cur, q_prev, present: Sequence[ObstacleHyp], params: SlalomCostParams,
                  horizon: HorizonSpec) -> np.ndarray:
    """Straight rollout bent around each obstacle on the side nearest to it.

    Obstacles are handled in order of ``x``; each detour is a raised-cosine
    bump in ``y`` so that the headings stay smooth.
    """
    z = straight_rollout(q_cur, q_prev, horizon)
    x, y = z[:, 0], z[:, 1].copy()
    for o in sorted(present, key=lambda o: o.center[0]):
        ox, oy = o.center
        if not x[0] - CORRIDOR_RAMP <= ox <= x[-1] + CORRIDOR_RAMP:
            continue
        reach = o.radius + params.d_avoid + CORRIDOR_MARGIN
        y_at = float(np.interp(ox, x, y))
        gap = y_at - oy
        if abs(gap) >= reach:
            continue
        side = math.copysign(1.0, gap) if gap != 0.0 else (1.0 if oy <= params.y_center else -1.0)
        dist = np.abs(x - ox) - reach
        w = np.where(dist <= 0.0, 1.0,
                     np.where(dist < CORRIDOR_RAMP,
                              0.5 * (1.0 + np.cos(math.pi * dist / CORRIDOR_RAMP)), 0.0))
        y = y + w * (oy + side * reach - y_at)
    prev = np.concatenate([[q_cur[:2]], np.column_stack([x, y])[:-1]])
    th = np.unwrap(np.concatenate([[q_cur[2]],
                                   np.arctan2(y - prev[:, 1], x - prev[:, 0])]))[1:]
    return np.column_stack([x, y, th])


def _merit(problem, tree: ControlTree) -> float:
    """Expected cost with a large charge for residual constraint violation."""
    total = 0.0
    for b, z in zip(problem.branches, tree.branches):
        v = np.asarray(z, dtype=float).ravel()
        viol = max(float(np.max(b.ineq.value(v), initial=0.0)),
                   float(np.max(np.abs(b.eq.value(v)), initial=0.0)))
        total += b.cost_weight * b.cost.value(v) + 1e4 * viol
    return total


def _rebase_headings(z, q_cur) -> np.ndarray:
    """Unwrap a heading sequence so it starts within pi of the current heading."""
    z = np.array(z, dtype=float)
    th = np.unwrap(np.concatenate([[q_cur[2]], z[:, 2]]))
    z[:, 2] = th[1:]
    return z


def stage_costs(q_cur, q_prev, z, params: SlalomCostParams, dt: float) -> np.ndarray:
    """Per-step slalom cost of the pose sequence ``z`` following ``q_prev, q_cur``."""
    D, Q = _pose_sequence(np.asarray(q_prev, float), np.asarray(q_cur, float), np.asarray(z, float))
    vel = D[1:] / dt
    acc = (D[1:] - D[:-1]) / (dt * dt)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    return (params.w_acc * (acc * acc).sum(axis=1)
            + params.w_center * (Q[2:, 1] - params.y_center) ** 2
            + params.w_speed * (speed - params.v_desired) ** 2)


def trunk_cost(tree: ControlTree, q_cur, q_prev,
               params: SlalomCostParams = SlalomCostParams()) -> float:
    """Mean stage cost over the shared trunk (the executed part of the plan)."""
    return float(stage_costs(q_cur, q_prev, tree.consensus, params, tree.horizon.dt).mean())


TREE_CSV_HEADER = ("branch", "t_s", "x_m", "y_m", "theta_rad", "p_branch")


def tree_rows(tree: ControlTree) -> list[tuple]:
    dt = tree.horizon.dt
    rows = []
    for s, z in enumerate(tree.branches):
        p = tree.weights[s] if tree.weights else float("nan")
        for t in range(z.shape[0]):
            rows.append((s, (t + 1) * dt, float(z[t, 0]), float(z[t, 1]),
                         wrap_angle(z[t, 2]), p))
    return rows
