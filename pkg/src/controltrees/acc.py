"""Adaptive cruise control among pedestrians with uncertain crossing intent.

The car is a double integrator ``x' = x + dt v``, ``v' = v + dt u``. States
are eliminated by rollout, so each branch is a QP in the ``T`` accelerations.
Branch ``s`` of the tree stops before the ``s``-th pedestrian; the last
branch is the free road.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .solver import SolverConfig, SolverState, solve
from .solver.warm import warm_start
from .terms import HingePenalty, LinearConstraint, QuadraticCost, SumCost
from .tree import (
    BranchProblem,
    ControlTree,
    HorizonSpec,
    Resolution,
    build_tree_problem,
    crossing_belief,
    exact_distribution,
)

log = logging.getLogger(__name__)

SOFT_STOP_WEIGHT = 1e3
FREE = "free"
# penalties matched to the condensed cost scale; unit penalties stall on
# the nearly dependent stop rows of a car coming to rest
ACC_SOLVER_CONFIG = SolverConfig(mu=300.0, rho=3.0)


@dataclass(frozen=True)
class CarState:
    x: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.v)):
            raise ValueError("car state must be finite")


@dataclass(frozen=True)
class AccCostParams:
    k_v: float = 1.0
    k_u: float = 5.0
    v_desired: float = 13.4
    d_safety: float = 2.5
    u_min: float = -8.0
    u_max: float = 2.0

    def __post_init__(self):
        if not (self.k_v > 0 and self.k_u > 0):
            raise ValueError("cost weights must be positive")
        if not self.u_min < self.u_max:
            raise ValueError("need u_min < u_max")
        if self.d_safety < 0:
            raise ValueError("d_safety must be non-negative")


@dataclass(frozen=True)
class PedestrianObs:
    position: float
    crossing_prob: float
    resolved: Resolution = Resolution.UNCERTAIN
    ident: Optional[int] = None

    def __post_init__(self):
        p = self.crossing_prob
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"crossing probability {p!r} outside [0, 1]")
        if self.resolved is Resolution.TRUE and p != 1.0:
            raise ValueError("a pedestrian resolved as crossing must have p = 1")
        if self.resolved is Resolution.FALSE and p != 0.0:
            raise ValueError("a pedestrian resolved as not crossing must have p = 0")

    @property
    def key(self) -> str:
        return f"stop:{self.ident if self.ident is not None else self.position!r}"


def step_dynamics(state: CarState, u: float, dt: float) -> CarState:
    return CarState(state.x + dt * state.v, state.v + dt * u)


@lru_cache(maxsize=32)
def rollout_matrices(T: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """``(Bx, Bv)`` with ``x_{t+1} = x0 + (t+1) dt v0 + Bx u`` and ``v_{t+1} = v0 + Bv u``."""
    t = np.arange(T)[:, None]
    k = np.arange(T)[None, :]
    Bv = dt * (k <= t).astype(float)
    Bx = dt * dt * np.maximum(t - k, 0).astype(float)
    Bv.setflags(write=False)
    Bx.setflags(write=False)
    return Bx, Bv


def rollout(state0: CarState, controls, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Positions and speeds after each control, ``x_1..x_T`` and ``v_1..v_T``."""
    u = np.asarray(controls, dtype=float).ravel()
    Bx, Bv = rollout_matrices(u.size, float(dt))
    steps = np.arange(1, u.size + 1)
    return state0.x + steps * dt * state0.v + Bx @ u, state0.v + Bv @ u


def stop_feasible(state0: CarState, stop_limit: float, params: AccCostParams,
                  horizon: HorizonSpec) -> bool:
    """Whether full braking keeps every predicted position at or before ``stop_limit``."""
    x, _ = rollout(state0, np.full(horizon.total_steps, params.u_min), horizon.dt)
    return bool(np.max(x) <= stop_limit + 1e-9)


def condense_branch(state0: CarState, params: AccCostParams, stop_position: Optional[float],
                    horizon: HorizonSpec, weight: float, label: str = "") -> BranchProblem:
    """Condensed QP for one hypothesis.

    Cost ``sum_t k_v (v_{t+1} - v_des)^2 + k_u u_t^2``; control bounds on every
    step and, with ``stop_position``, ``x_{t+1} <= stop_position - d_safety``.
    A stop that full braking cannot honour is turned into a hinge penalty of
    weight ``SOFT_STOP_WEIGHT``.
    """
    T, dt = horizon.total_steps, horizon.dt
    Bx, Bv = rollout_matrices(T, float(dt))
    dv = state0.v - params.v_desired
    H = 2.0 * (params.k_v * Bv.T @ Bv + params.k_u * np.eye(T))
    f = 2.0 * params.k_v * dv * Bv.sum(axis=0)
    cost = QuadraticCost(H, f, params.k_v * T * dv * dv)

    eye = np.eye(T)
    rows = [eye, -eye]
    rhs = [np.full(T, params.u_max), np.full(T, -params.u_min)]
    if stop_position is not None:
        limit = stop_position - params.d_safety
        x_free = state0.x + np.arange(1, T + 1) * dt * state0.v
        stop = LinearConstraint(Bx, limit - x_free)
        if stop_feasible(state0, limit, params, horizon):
            rows.append(Bx)
            rhs.append(limit - x_free)
        else:
            log.warning("stop before x=%.2f infeasible from x=%.2f v=%.2f; softening",
                        stop_position, state0.x, state0.v)
            cost = SumCost([cost, HingePenalty(stop, SOFT_STOP_WEIGHT)])
    ineq = LinearConstraint(np.vstack(rows), np.concatenate(rhs))
    return BranchProblem(weight=weight, cost=cost, steps=T, dim=1, ineq=ineq, label=label)


def reach(state0: CarState, params: AccCostParams, horizon: HorizonSpec) -> float:
    """Farthest position the model can predict within the horizon."""
    T, dt = horizon.total_steps, horizon.dt
    return state0.x + T * dt * max(state0.v, 0.0) + params.u_max * dt * dt * T * (T - 1) / 2


def relevant_pedestrians(state0: CarState, pedestrians: Sequence[PedestrianObs],
                         params: AccCostParams, horizon: HorizonSpec) -> list[PedestrianObs]:
    """Unresolved or crossing pedestrians ahead whose stop line is reachable, by position."""
    far = reach(state0, params, horizon)
    keep = [
        p for p in pedestrians
        if p.resolved is not Resolution.FALSE
        and p.position > state0.x
        and p.position - params.d_safety < far
    ]
    return sorted(keep, key=lambda p: p.position)


def acc_hypotheses(pedestrians: Sequence[PedestrianObs], cap: Optional[int] = None):
    """``(stop_position, weight, label)`` per branch for sorted pedestrians.

    Without a cap this is the closest-crossing belief. With ``cap`` branches,
    hypotheses from the ``cap - 1``-th pedestrian on are merged into one branch
    that stops before that pedestrian. ``cap = 1`` is the single worst-case
    hypothesis: stop before the nearest pedestrian.
    """
    peds = list(pedestrians)
    if cap is not None and cap < 1:
        raise ValueError("cap must be >= 1")
    if not peds:
        return [(None, 1.0, FREE)]
    if cap == 1:
        return [(peds[0].position, 1.0, peds[0].key)]
    if cap is None or len(peds) <= cap - 1:
        belief = crossing_belief([p.crossing_prob for p in peds])
        hyps = [(p.position, belief[i], p.key) for i, p in enumerate(peds)]
        return hyps + [(None, belief[len(peds)], FREE)]
    exact = []
    remaining = Fraction(1)
    for p in peds[: cap - 2]:
        fp = Fraction(p.crossing_prob)
        exact.append(fp * remaining)
        remaining *= 1 - fp
    free = remaining
    for p in peds[cap - 2:]:
        free *= 1 - Fraction(p.crossing_prob)
    exact += [remaining - free, free]
    w = exact_distribution(exact, pinned=(len(exact) - 1,))
    stops = peds[: cap - 1]
    return [(p.position, w[i], p.key) for i, p in enumerate(stops)] + [(None, w[-1], FREE)]


def build_acc_problem(state0: CarState, pedestrians: Sequence[PedestrianObs],
                      params: AccCostParams, horizon: HorizonSpec, cap: Optional[int] = None):
    peds = relevant_pedestrians(state0, pedestrians, params, horizon)
    branches = [
        condense_branch(state0, params, stop, horizon, w, label)
        for stop, w, label in acc_hypotheses(peds, cap)
    ]
    return build_tree_problem(branches, horizon)


def plan_acc(state0: CarState, pedestrians: Sequence[PedestrianObs],
             params: AccCostParams = AccCostParams(), horizon: HorizonSpec = HorizonSpec(),
             cfg: Optional[SolverConfig] = None, cap: Optional[int] = None,
             warm: Optional[tuple[ControlTree, SolverState, float]] = None, workers: int = 1):
    """Plan a control-tree; ``tree.first_control`` is the acceleration to apply.

    ``warm`` is ``(previous_tree, previous_state, elapsed_steps)``. ``cfg``
    defaults to ``ACC_SOLVER_CONFIG``.
    """
    cfg = ACC_SOLVER_CONFIG if cfg is None else cfg
    problem = build_acc_problem(state0, pedestrians, params, horizon, cap)
    z0 = c0 = d0 = None
    if warm is not None:
        z0, c0, d0 = warm_start(problem, *warm)
    return solve(problem, z0, c0, cfg, d0, workers=workers)


def plan_acc_single(state0: CarState, pedestrians: Sequence[PedestrianObs],
                    params: AccCostParams = AccCostParams(), horizon: HorizonSpec = HorizonSpec(),
                    cfg: Optional[SolverConfig] = None, warm=None, workers: int = 1):
    """Worst-case single-hypothesis MPC: stop before the nearest uncertain pedestrian."""
    return plan_acc(state0, pedestrians, params, horizon, cfg, cap=1, warm=warm, workers=workers)


def max_branch_count(density_per_km: float, horizon: HorizonSpec = HorizonSpec(),
                     v_max: float = 13.9, u_min: float = -8.0, cap: Optional[int] = None) -> int:
    """Branches needed for a pedestrian density: reachable pedestrians + 1.

    The stretch of road where a stop line can bind is the distance covered at
    ``v_max`` over the horizon minus the full-braking distance from ``v_max``.
    """
    if density_per_km < 0:
        raise ValueError("density must be non-negative")
    envelope = v_max * horizon.duration - v_max * v_max / (2.0 * abs(u_min))
    count = int(math.floor(density_per_km / 1000.0 * max(envelope, 0.0) + 1e-9)) + 1
    return count if cap is None else max(1, min(count, cap))


def stage_costs(state0: CarState, controls, params: AccCostParams, dt: float) -> np.ndarray:
    """Per-step cost ``k_v (v_{t+1} - v_des)^2 + k_u u_t^2`` along a control sequence."""
    u = np.asarray(controls, dtype=float).ravel()
    _, v = rollout(state0, u, dt)
    return params.k_v * (v - params.v_desired) ** 2 + params.k_u * u * u


def trunk_cost(tree: ControlTree, state0: CarState, params: AccCostParams = AccCostParams()) -> float:
    """Mean stage cost over the shared trunk (the executed part of the plan)."""
    return float(stage_costs(state0, tree.consensus[:, 0], params, tree.horizon.dt).mean())


TREE_CSV_HEADER = ("branch", "t_s", "x_m", "v_mps", "u_mps2", "p_branch")


def tree_rows(tree: ControlTree, state0: CarState) -> list[tuple]:
    """``(branch, t, x, v, u, p)`` per branch and step; state is before the control."""
    dt = tree.horizon.dt
    rows = []
    for s, z in enumerate(tree.branches):
        u = z[:, 0]
        x, v = rollout(state0, u, dt)
        xs = np.concatenate([[state0.x], x[:-1]])
        vs = np.concatenate([[state0.v], v[:-1]])
        p = tree.weights[s] if tree.weights else float("nan")
        for t in range(u.size):
            rows.append((s, t * dt, float(xs[t]), float(vs[t]), float(u[t]), p))
    return rows
