"""Closed-loop episodes and their metrics."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import astuple, dataclass, field, fields
from typing import Optional

import numpy as np

from ..acc import AccCostParams, CarState, trunk_cost
from ..slalom import SlalomCostParams, wrap_angle
from ..slalom import trunk_cost as slalom_trunk_cost
from ..solver import SolverConfig
from ..solver.dal import SolverError
from ..tree import HorizonSpec, Resolution
from .controllers import make_controller, parse_controller
from .perception import oracle_perception, simulate_perception
from .scenario import ACC, ScenarioConfig, generate_scene

log = logging.getLogger(__name__)

# slack for sampled-time constraint checks on the plant (m)
VIOLATION_TOL = 0.05


@dataclass
class EpisodeMetrics:
    """Per-episode summary.

    ``avg_cost`` is the planned cost per step within the control horizon
    (the shared trunk), averaged over the cycles whose plan succeeded.
    ``avg_realized_cost`` applies the same stage cost to the executed
    trajectory: ``k_v (v - v_des)^2 + k_u u^2`` for the pedestrian scenario,
    acceleration, centerline and speed terms for the slalom. Planning times
    are wall-clock and excluded from :meth:`key`.
    """

    kind: str
    controller: str
    seed: int
    steps: int
    avg_cost: float
    avg_realized_cost: float
    avg_speed: float
    distance: float
    violations: int
    collisions: int
    failures: int
    nonconverged: int
    plan_ms_mean: float
    plan_ms_p95: float
    trace: list = field(default_factory=list, repr=False, compare=False)

    TIMING_FIELDS = ("plan_ms_mean", "plan_ms_p95")

    def key(self) -> tuple:
        """Deterministic fields, for reproducibility checks."""
        return tuple(getattr(self, f.name) for f in fields(self)
                     if f.name not in self.TIMING_FIELDS and f.name != "trace")

    @classmethod
    def header(cls, timings: bool = True) -> tuple[str, ...]:
        names = [f.name for f in fields(cls) if f.name != "trace"]
        return tuple(n for n in names if timings or n not in cls.TIMING_FIELDS)

    def row(self, timings: bool = True) -> tuple:
        return tuple(getattr(self, n) for n in self.header(timings))


ACC_TRACE_HEADER = ("t_s", "x_m", "v_mps", "u_mps2", "branches", "iterations", "converged",
                    "trunk_cost")
SLALOM_TRACE_HEADER = ("t_s", "x_m", "y_m", "theta_rad", "v_mps", "omega_radps",
                       "branches", "iterations", "converged", "trunk_cost")


def run_episode(cfg: ScenarioConfig, controller: str, solver_cfg: Optional[SolverConfig] = None,
                workers: int = 1, horizon: HorizonSpec = HorizonSpec(),
                keep_trace: bool = False) -> EpisodeMetrics:
    """Simulate ``cfg.duration`` seconds under ``controller`` and summarise.

    Each cycle: perceive, plan (warm-started), apply the first trunk command
    for one control period, check safety. A planner failure is logged and the
    previous command is held.
    """
    spec = parse_controller(controller)
    ctrl = make_controller(controller, cfg, solver_cfg, workers, horizon)
    scene = generate_scene(cfg)
    if cfg.kind == ACC:
        return _run_acc(cfg, spec, ctrl, scene, horizon, keep_trace)
    return _run_slalom(cfg, spec, ctrl, scene, horizon, keep_trace)


def _summary(cfg, name, steps, planned, cost, speed, distance, violations, collisions,
             failures, nonconverged, times, trace):
    t = np.asarray(times) * 1e3
    return EpisodeMetrics(
        kind=cfg.kind,
        controller=name,
        seed=cfg.seed,
        steps=steps,
        avg_cost=float(np.mean(planned)) if planned else math.nan,
        avg_realized_cost=float(cost / steps),
        avg_speed=float(speed / steps),
        distance=float(distance),
        violations=violations,
        collisions=collisions,
        failures=failures,
        nonconverged=nonconverged,
        plan_ms_mean=float(t.mean()) if t.size else 0.0,
        plan_ms_p95=float(np.percentile(t, 95)) if t.size else 0.0,
        trace=trace,
    )


def _run_acc(cfg, spec, ctrl, scene, horizon, keep_trace):
    p: AccCostParams = ctrl.params
    dt = cfg.control_dt
    shift = dt / horizon.dt
    positions = [e.x for e in scene]
    by_id = {e.ident: e for e in scene}
    v0 = p.v_desired if cfg.initial_speed is None else cfg.initial_speed
    car = CarState(0.0, v0)
    revealed_at: dict[int, float] = {}
    hit: set[int] = set()
    u = 0.0
    cost = speed = 0.0
    violations = collisions = failures = nonconverged = 0
    times, trace, planned = [], [], []
    for k in range(cfg.n_steps):
        t = k * dt
        seen = simulate_perception(scene, car.x, positions)
        for o in seen:
            if o.resolved is Resolution.TRUE and o.ident not in revealed_at:
                revealed_at[o.ident] = t
        # crossing pedestrians leave the lane after crossing_duration
        done = {i for i, tr in revealed_at.items() if t - tr >= cfg.crossing_duration}
        if spec.oracle:
            obs = [o for o in oracle_perception(scene, car.x, positions) if o.ident not in done]
        else:
            obs = [o for o in seen if o.ident not in done]
        t0 = time.perf_counter()
        try:
            u, tree, report = ctrl(car, obs, shift)
            tc = trunk_cost(tree, car, p)
            planned.append(tc)
            nonconverged += not report.converged
            n_br, iters, conv = len(tree.branches), report.iterations, report.converged
        except SolverError as exc:
            log.warning("planner failed at t=%.2f: %s; holding u=%.3f", t, exc, u)
            failures += 1
            ctrl.reset()
            n_br, iters, conv, tc = 0, 0, False, math.nan
        times.append(time.perf_counter() - t0)
        cost += p.k_v * (car.v - p.v_desired) ** 2 + p.k_u * u * u
        speed += car.v
        if keep_trace:
            trace.append((t, car.x, car.v, u, n_br, iters, conv, tc))
        car = CarState(car.x + dt * car.v, max(0.0, car.v + dt * u))
        for i, tr in revealed_at.items():
            if i in done:
                continue
            xp = by_id[i].x
            if car.x >= xp:
                if i not in hit:
                    hit.add(i)
                    collisions += 1
            elif car.x > xp - p.d_safety + VIOLATION_TOL:
                violations += 1
    return _summary(cfg, spec.name, cfg.n_steps, planned, cost, speed, car.x, violations,
                    collisions, failures, nonconverged, times, trace)


def unicycle_step(q, v: float, omega: float, dt: float) -> np.ndarray:
    """Exact constant-(v, omega) integration over ``dt``."""
    x, y, th = q
    if abs(omega) < 1e-9:
        return np.array([x + v * dt * math.cos(th), y + v * dt * math.sin(th), th])
    th1 = th + omega * dt
    r = v / omega
    return np.array([x + r * (math.sin(th1) - math.sin(th)),
                     y - r * (math.cos(th1) - math.cos(th)), th1])


def _run_slalom(cfg, spec, ctrl, scene, horizon, keep_trace):
    p: SlalomCostParams = ctrl.params
    dt = cfg.control_dt
    shift = dt / horizon.dt
    dtp = horizon.dt
    positions = [e.x for e in scene]
    real = [e for e in scene if e.truth]
    real_x = np.array([e.x for e in real])
    real_c = np.array([(e.x, e.y) for e in real]).reshape(-1, 2)
    r_obs = cfg.obstacle_radius
    v = p.v_desired if cfg.initial_speed is None else cfg.initial_speed
    omega = 0.0
    q = np.array([0.0, p.y_center, 0.0])
    q_hist = [q - np.array([dt * v, 0.0, 0.0]), q]
    cost = speed = 0.0
    violations = collisions = failures = nonconverged = 0
    times, trace, planned = [], [], []
    for k in range(cfg.n_steps):
        t = k * dt
        perceive = oracle_perception if spec.oracle else simulate_perception
        obs = perceive(scene, q[0], positions)
        q_prev = q - dtp * np.array([v * math.cos(q[2]), v * math.sin(q[2]), omega])
        t0 = time.perf_counter()
        try:
            target, tree, report = ctrl(q, q_prev, obs, shift)
            tc = slalom_trunk_cost(tree, q, q_prev, p)
            planned.append(tc)
            nonconverged += not report.converged
            d = target - q
            v = float(math.hypot(d[0], d[1]) / dtp)
            omega = float(wrap_angle(d[2]) / dtp)
            n_br, iters, conv = len(tree.branches), report.iterations, report.converged
        except SolverError as exc:
            log.warning("planner failed at t=%.2f: %s; holding command", t, exc)
            failures += 1
            ctrl.reset()
            n_br, iters, conv, tc = 0, 0, False, math.nan
        times.append(time.perf_counter() - t0)
        if keep_trace:
            trace.append((t, q[0], q[1], q[2], v, omega, n_br, iters, conv, tc))
        q_next = unicycle_step(q, v, omega, dt)
        # collision check along the executed arc
        lo, hi = np.searchsorted(real_x, [q[0] - 5.0, q_next[0] + 5.0])
        if hi > lo:
            sub = np.array([unicycle_step(q, v, omega, dt * s / 10) for s in range(1, 11)])
            dist = np.hypot(sub[:, None, 0] - real_c[None, lo:hi, 0],
                            sub[:, None, 1] - real_c[None, lo:hi, 1])
            collisions += int(np.any(dist.min(axis=0) < r_obs))
            end = dist[-1]
            violations += int(np.any(end < r_obs + p.d_avoid - VIOLATION_TOL))
        q = q_next
        q_hist.append(q)
        q2, q1, q0 = q_hist[-3], q_hist[-2], q_hist[-1]
        vel = (q0 - q1) / dt
        vel[2] = wrap_angle(q0[2] - q1[2]) / dt
        vel_prev = (q1 - q2) / dt
        vel_prev[2] = wrap_angle(q1[2] - q2[2]) / dt
        acc = (vel - vel_prev) / dt
        sp = math.hypot(vel[0], vel[1])
        cost += (p.w_acc * float(acc @ acc) + p.w_center * (q0[1] - p.y_center) ** 2
                 + p.w_speed * (sp - p.v_desired) ** 2)
        speed += sp
        del q_hist[0]
    return _summary(cfg, spec.name, cfg.n_steps, planned, cost, speed, q[0], violations,
                    collisions, failures, nonconverged, times, trace)
