"""Simulated perception: probability streams that resolve at a reveal distance."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Sequence

from ..tree import Resolution
from .scenario import Entity

SENSOR_RANGE = 150.0
# entities this far behind the agent are no longer reported
BEHIND_RANGE = 10.0


@dataclass(frozen=True)
class Observation:
    ident: int
    x: float
    y: float
    prob: float
    resolved: Resolution


def _window(scene: Sequence[Entity], agent_x: float, positions=None) -> Sequence[Entity]:
    xs = [e.x for e in scene] if positions is None else positions
    lo = bisect.bisect_left(xs, agent_x - BEHIND_RANGE)
    hi = bisect.bisect_right(xs, agent_x + SENSOR_RANGE)
    return scene[lo:hi]


def simulate_perception(scene: Sequence[Entity], agent_x: float,
                        positions: Sequence[float] = None) -> list[Observation]:
    """Observations for entities within sensor range of an agent at ``agent_x``.

    Farther than its reveal distance an entity reports its prior. Closer, it
    is resolved: a true entity reports probability 1 and a false one is
    dropped from the stream. Progress along the road is monotone, so a
    resolved entity never reverts. ``positions`` (the sorted entity
    positions) saves recomputing them on every call.
    """
    out = []
    for e in _window(scene, agent_x, positions):
        if e.x - agent_x < e.reveal_distance:
            if e.truth:
                out.append(Observation(e.ident, e.x, e.y, 1.0, Resolution.TRUE))
        else:
            out.append(Observation(e.ident, e.x, e.y, e.prior, Resolution.UNCERTAIN))
    return out


def oracle_perception(scene: Sequence[Entity], agent_x: float,
                      positions: Sequence[float] = None) -> list[Observation]:
    """Ground truth: true entities resolved, false ones absent, at any distance."""
    return [
        Observation(e.ident, e.x, e.y, 1.0, Resolution.TRUE)
        for e in _window(scene, agent_x, positions)
        if e.truth
    ]
