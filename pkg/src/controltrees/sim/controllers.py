"""Closed-loop controllers: control-trees, the worst-case baseline and the oracle.

Controller names:

``tree-full``
    pedestrians: as many branches as the density can require
    (:func:`~controltrees.acc.max_branch_count`); slalom: existence
    combinations of up to four uncertain obstacles.
``tree-N``
    at most ``N`` branches. For the slalom this enumerates the
    ``floor(log2 N)`` nearest uncertain obstacles.
``single``
    one branch treating every unresolved hazard as real.
``oracle``
    plans on ground truth.

Uncertain obstacles beyond what a slalom tree enumerates are treated as
real, which keeps every controller on the safe side.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .. import acc, slalom
from ..acc import AccCostParams, CarState, PedestrianObs
from ..slalom import ObstacleHyp, SlalomCostParams
from ..solver import SolverConfig
from ..tree import HorizonSpec, Resolution
from .perception import Observation
from .scenario import ACC, ScenarioConfig

_TREE_N = re.compile(r"tree-(\d+)$")
CONTROLLERS = ("tree-full", "tree-N", "single", "oracle")


@dataclass(frozen=True)
class ControllerSpec:
    name: str
    max_branches: Optional[int]  # None: the front-end's full tree
    oracle: bool = False


def parse_controller(name: str) -> ControllerSpec:
    name = name.strip().lower()
    if name == "tree-full":
        return ControllerSpec(name, None)
    if name in ("single", "baseline"):
        return ControllerSpec("single", 1)
    if name == "oracle":
        return ControllerSpec(name, None, oracle=True)
    m = _TREE_N.match(name)
    if m and int(m.group(1)) >= 1:
        return ControllerSpec(name, int(m.group(1)))
    raise ValueError(f"unknown controller {name!r}; expected one of {CONTROLLERS}")


def pedestrian_inputs(observations: Sequence[Observation]) -> list[PedestrianObs]:
    out = []
    for o in observations:
        if o.resolved is Resolution.UNCERTAIN:
            out.append(PedestrianObs(o.x, o.prob, Resolution.UNCERTAIN, o.ident))
        elif o.resolved is Resolution.TRUE:
            out.append(PedestrianObs(o.x, 1.0, Resolution.TRUE, o.ident))
    return out


class AccController:
    """Receding-horizon ACC planner with warm starts between cycles."""

    def __init__(self, spec: ControllerSpec, scenario: ScenarioConfig,
                 params: AccCostParams = AccCostParams(), horizon: HorizonSpec = HorizonSpec(),
                 cfg: Optional[SolverConfig] = None, workers: int = 1):
        self.spec = spec
        self.params = params
        self.horizon = horizon
        self.cfg = cfg
        self.workers = workers
        if spec.max_branches is None and not spec.oracle:
            self.cap = acc.max_branch_count(scenario.density_per_km, horizon,
                                            u_min=params.u_min)
        else:
            self.cap = spec.max_branches
        self.reset()

    def reset(self):
        self._warm = None

    def __call__(self, car: CarState, observations: Sequence[Observation], elapsed_steps: float):
        """Returns ``(acceleration, tree, report)``."""
        warm = None if self._warm is None else (*self._warm, elapsed_steps)
        tree, report = acc.plan_acc(car, pedestrian_inputs(observations), self.params,
                                    self.horizon, self.cfg, cap=self.cap, warm=warm,
                                    workers=self.workers)
        self._warm = (tree, report.state)
        u = float(np.clip(tree.first_control[0], self.params.u_min, self.params.u_max))
        return u, tree, report


def baseline_single_hypothesis(car: CarState, observations: Sequence[Observation],
                               params: AccCostParams = AccCostParams(),
                               horizon: HorizonSpec = HorizonSpec(),
                               cfg: Optional[SolverConfig] = None) -> float:
    """Worst-case command: stop before the nearest unresolved or crossing pedestrian."""
    tree, _ = acc.plan_acc_single(car, pedestrian_inputs(observations), params, horizon, cfg)
    return float(np.clip(tree.first_control[0], params.u_min, params.u_max))


class SlalomController:
    """Receding-horizon slalom planner; the command is the next trunk pose."""

    def __init__(self, spec: ControllerSpec, scenario: ScenarioConfig,
                 params: SlalomCostParams = SlalomCostParams(),
                 horizon: HorizonSpec = HorizonSpec(), cfg: Optional[SolverConfig] = None,
                 workers: int = 1):
        self.spec = spec
        self.params = params
        self.horizon = horizon
        self.cfg = cfg
        self.workers = workers
        self.radius = scenario.obstacle_radius
        if spec.max_branches is None:
            self.k = slalom.MAX_UNCERTAIN
        else:
            self.k = min(int(math.floor(math.log2(spec.max_branches))), slalom.MAX_UNCERTAIN)
        self.reset()

    def reset(self):
        self._warm = None

    def obstacles(self, q_cur, observations: Sequence[Observation]) -> list[ObstacleHyp]:
        """Obstacle hypotheses within reach; uncertain ones past the first ``k`` become real."""
        margin = self.radius + self.params.d_avoid
        # 10% past the distance covered at the desired speed over the horizon
        ahead = q_cur[0] + 1.1 * self.params.v_desired * self.horizon.duration + margin
        near = [o for o in observations if q_cur[0] - margin < o.x < ahead]
        near.sort(key=lambda o: (o.x, o.ident))
        out, enumerated = [], 0
        for o in near:
            if o.resolved is Resolution.UNCERTAIN:
                if enumerated < self.k:
                    enumerated += 1
                    out.append(ObstacleHyp((o.x, o.y), self.radius, o.prob,
                                           Resolution.UNCERTAIN, o.ident))
                elif self.spec.max_branches == 1 or o.prob >= 0.5:
                    out.append(ObstacleHyp((o.x, o.y), self.radius, 1.0, Resolution.TRUE, o.ident))
            else:
                out.append(ObstacleHyp((o.x, o.y), self.radius, 1.0, Resolution.TRUE, o.ident))
        return out

    def __call__(self, q_cur, q_prev, observations: Sequence[Observation], elapsed_steps: float):
        """Returns ``(target_pose, tree, report)`` with the pose ``dt`` ahead."""
        warm = None if self._warm is None else (*self._warm, elapsed_steps)
        obs = self.obstacles(q_cur, observations)
        tree, report = slalom.plan_slalom(q_cur, q_prev, obs, self.params, self.horizon,
                                          self.cfg, max_uncertain=self.k, warm=warm,
                                          workers=self.workers)
        self._warm = (tree, report.state)
        return np.array(tree.consensus[0]), tree, report


def make_controller(name: str, scenario: ScenarioConfig, cfg: Optional[SolverConfig] = None,
                    workers: int = 1, horizon: HorizonSpec = HorizonSpec()):
    spec = parse_controller(name)
    if scenario.kind == ACC:
        return AccController(spec, scenario, horizon=horizon, cfg=cfg, workers=workers)
    return SlalomController(spec, scenario, horizon=horizon, cfg=cfg, workers=workers)
