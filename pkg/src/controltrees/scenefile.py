"""Single-scene files for the ``plan`` command.

A pedestrian scene::

    [scene]
    kind = pedestrian-acc
    x = 0
    v = 13.33

    [pedestrian a]
    position = 25
    crossing_prob = 0.15

A slalom scene gives the pose and speed of the vehicle and its obstacles::

    [scene]
    kind = slalom
    x = 0
    y = 0
    theta = 0
    speed = 10

    [obstacle a]
    x = 20
    y = 0.3
    existence_prob = 0.1

Optional sections: ``[costs]`` (cost parameter overrides), ``[horizon]``
(``trunk_steps``, ``total_steps``, ``dt``), ``[solver]`` and ``[newton]``.
Entities may set ``resolved = uncertain | true | false``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import acc, slalom
from .acc import AccCostParams, CarState, PedestrianObs
from .slalom import ObstacleHyp, SlalomCostParams
from .solver import SolverConfig
from .solver.config import ConfigError, parse_value, read_config
from .tree import HorizonSpec, ProblemError, Resolution

_RESOLUTION = {"uncertain": Resolution.UNCERTAIN, "true": Resolution.TRUE,
               "false": Resolution.FALSE}


@dataclass(frozen=True)
class AccScene:
    state: CarState
    pedestrians: tuple[PedestrianObs, ...]
    params: AccCostParams = AccCostParams()


@dataclass(frozen=True)
class SlalomScene:
    q_cur: tuple[float, float, float]
    q_prev: tuple[float, float, float]
    obstacles: tuple[ObstacleHyp, ...]
    params: SlalomCostParams = SlalomCostParams()


@dataclass(frozen=True)
class SceneFile:
    scene: Union[AccScene, SlalomScene]
    horizon: HorizonSpec = HorizonSpec()
    solver: Optional[SolverConfig] = None


def _take(section, key, typ=float, default=None):
    raw = section.get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"[{section.name}] is missing {key!r}")
        return default
    try:
        val = parse_value(raw, typ)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] bad value for {key!r}: {raw!r}") from exc
    if typ is float and not math.isfinite(val):
        raise ConfigError(f"[{section.name}] {key!r} must be finite")
    return val


def _check_keys(section, allowed):
    extra = set(section) - set(allowed) - set(section.parser.defaults())
    if extra:
        raise ConfigError(f"[{section.name}] unknown keys {sorted(extra)}")


def _resolution(section) -> Resolution:
    raw = section.get("resolved", "uncertain").strip().lower()
    if raw not in _RESOLUTION:
        raise ConfigError(f"[{section.name}] resolved must be one of {sorted(_RESOLUTION)}")
    return _RESOLUTION[raw]


def _params(parser, cls):
    if not parser.has_section("costs"):
        return cls()
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kw = {}
    for key, raw in parser["costs"].items():
        if key not in fields:
            raise ConfigError(f"unknown {cls.__name__} key {key!r}")
        try:
            kw[key] = parse_value(raw, type(fields[key].default))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return cls(**kw)


def _acc_scene(parser) -> AccScene:
    sc = parser["scene"]
    _check_keys(sc, ("kind", "x", "v"))
    state = CarState(_take(sc, "x", default=0.0), _take(sc, "v"))
    peds = []
    for i, name in enumerate(s for s in parser.sections() if s.startswith("pedestrian")):
        sec = parser[name]
        _check_keys(sec, ("position", "crossing_prob", "resolved"))
        res = _resolution(sec)
        default = {Resolution.TRUE: 1.0, Resolution.FALSE: 0.0}.get(res)
        p = _take(sec, "crossing_prob", default=default)
        peds.append(PedestrianObs(_take(sec, "position"), p, res, i))
    return AccScene(state, tuple(peds), _params(parser, AccCostParams))


def _slalom_scene(parser) -> SlalomScene:
    sc = parser["scene"]
    _check_keys(sc, ("kind", "x", "y", "theta", "speed"))
    x, y = _take(sc, "x", default=0.0), _take(sc, "y", default=0.0)
    th, v = _take(sc, "theta", default=0.0), _take(sc, "speed")
    if v < 0:
        raise ConfigError("[scene] speed must be non-negative")
    q_cur = (x, y, th)
    obstacles = []
    for i, name in enumerate(s for s in parser.sections() if s.startswith("obstacle")):
        sec = parser[name]
        _check_keys(sec, ("x", "y", "radius", "existence_prob", "resolved"))
        res = _resolution(sec)
        if res is Resolution.FALSE:
            continue
        p = _take(sec, "existence_prob", default=1.0 if res is Resolution.TRUE else None)
        obstacles.append(ObstacleHyp((_take(sec, "x"), _take(sec, "y")),
                                     _take(sec, "radius", default=0.5), p, res, i))
    return SlalomScene(q_cur, (0.0, 0.0, 0.0), tuple(obstacles), _params(parser, SlalomCostParams))


def load_scene(path) -> SceneFile:
    """Parse and validate a scene file; raises :class:`ConfigError` on any problem."""
    parser = read_config(path)
    if not parser.has_section("scene"):
        raise ConfigError("scene file has no [scene] section")
    kind = parser["scene"].get("kind", "").strip()
    try:
        horizon = HorizonSpec()
        if parser.has_section("horizon"):
            h = parser["horizon"]
            _check_keys(h, ("trunk_steps", "total_steps", "dt"))
            horizon = HorizonSpec(_take(h, "trunk_steps", int, horizon.trunk_steps),
                                  _take(h, "total_steps", int, horizon.total_steps),
                                  _take(h, "dt", float, horizon.dt))
        if kind == "pedestrian-acc":
            scene = _acc_scene(parser)
        elif kind == "slalom":
            scene = _slalom_scene(parser)
            q = np.asarray(scene.q_cur)
            v = _take(parser["scene"], "speed")
            q_prev = q - horizon.dt * np.array([v * math.cos(q[2]), v * math.sin(q[2]), 0.0])
            scene = dataclasses.replace(scene, q_prev=tuple(float(a) for a in q_prev))
            n_unc = sum(o.resolved is Resolution.UNCERTAIN for o in scene.obstacles)
            if n_unc > slalom.MAX_UNCERTAIN:
                raise ConfigError(f"{n_unc} uncertain obstacles; at most "
                                  f"{slalom.MAX_UNCERTAIN} are supported")
        else:
            raise ConfigError(f"[scene] kind must be pedestrian-acc or slalom, got {kind!r}")
        has_solver = parser.has_section("solver") or parser.has_section("newton")
        solver = SolverConfig.from_parser(parser) if has_solver else None
    except ConfigError:
        raise
    except (ValueError, ProblemError) as exc:
        raise ConfigError(str(exc)) from exc
    return SceneFile(scene, horizon, solver)


def plan_scene(sf: SceneFile, workers: int = 1):
    """Returns ``(tree, report, tree_header, tree_rows)``."""
    sc = sf.scene
    if isinstance(sc, AccScene):
        tree, report = acc.plan_acc(sc.state, sc.pedestrians, sc.params, sf.horizon, sf.solver,
                                    workers=workers)
        return tree, report, acc.TREE_CSV_HEADER, acc.tree_rows(tree, sc.state)
    tree, report = slalom.plan_slalom(sc.q_cur, sc.q_prev, sc.obstacles, sc.params, sf.horizon,
                                      sf.solver, workers=workers)
    return tree, report, slalom.TREE_CSV_HEADER, slalom.tree_rows(tree)
