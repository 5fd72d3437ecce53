"""Scenario configuration and seeded scene generation."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..solver.config import ConfigError, parse_value, read_config

ACC = "pedestrian-acc"
SLALOM = "slalom"
KINDS = (ACC, SLALOM)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything that defines one simulated run apart from the controller.

    Distances are in m, times in s, rates in Hz. ``density_per_km`` and
    ``crossing_fraction`` drive the pedestrian scenario; ``obstacle_spacing``
    and ``false_positive_rate`` the slalom. Each entity gets a reveal
    distance drawn uniformly from ``[reveal_min, reveal_max]``.
    """

    kind: str = ACC
    seed: int = 0
    duration: float = 300.0
    control_rate: float = 10.0
    density_per_km: float = 20.0
    crossing_fraction: float = 0.05
    crossing_duration: float = 4.0
    obstacle_spacing: float = 17.0
    false_positive_rate: float = 0.9
    obstacle_radius: float = 0.5
    lateral_spread: float = 1.0
    reveal_min: float = 5.0
    reveal_max: float = 25.0
    spawn_start: float = 40.0
    initial_speed: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if not self.control_rate > 0:
            raise ConfigError("control_rate must be positive")
        for name in ("crossing_fraction", "false_positive_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v!r}")
        if self.density_per_km < 0:
            raise ConfigError("density_per_km must be non-negative")
        if not (self.obstacle_spacing > 0 and self.obstacle_radius > 0):
            raise ConfigError("obstacle spacing and radius must be positive")
        if not 0 <= self.reveal_min <= self.reveal_max:
            raise ConfigError("need 0 <= reveal_min <= reveal_max")
        if self.crossing_duration < 0 or self.lateral_spread < 0:
            raise ConfigError("crossing_duration and lateral_spread must be non-negative")
        if self.initial_speed is not None and self.initial_speed < 0:
            raise ConfigError("initial_speed must be non-negative")

    @property
    def control_dt(self) -> float:
        return 1.0 / self.control_rate

    @property
    def n_steps(self) -> int:
        return int(round(self.duration * self.control_rate))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values) -> "ScenarioConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in fields:
                raise ConfigError(f"unknown scenario key {key!r}")
            default = fields[key].default
            typ = float if default is None else type(default)
            if isinstance(raw, str) and default is None and raw.strip().lower() in ("", "none"):
                kw[key] = None
                continue
            try:
                kw[key] = parse_value(raw, typ)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
        return cls(**kw)

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser) -> "ScenarioConfig":
        if not parser.has_section("scenario"):
            raise ConfigError("config has no [scenario] section")
        return cls.from_mapping(dict(parser["scenario"]))

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        return cls.from_parser(read_config(Path(path)))


@dataclass(frozen=True)
class Entity:
    """A pedestrian (``truth`` = will cross) or obstacle (``truth`` = exists).

    ``prior`` is the probability perception reports until the agent is
    closer than ``reveal_distance``.
    """

    ident: int
    x: float
    y: float
    truth: bool
    prior: float
    reveal_distance: float


def scene_length(cfg: ScenarioConfig) -> float:
    """Road length that a run cannot outdrive (speeds stay below 15 m/s)."""
    return cfg.spawn_start + 15.0 * cfg.duration + 200.0


def generate_scene(cfg: ScenarioConfig) -> tuple[Entity, ...]:
    """Entities sorted by position, fully determined by ``cfg``.

    Pedestrians arrive as a Poisson process along the road; obstacles sit
    every ``obstacle_spacing`` metres with a jitter of a quarter spacing.
    """
    rng = np.random.default_rng(cfg.seed)
    end = scene_length(cfg)
    out = []
    if cfg.kind == ACC:
        if cfg.density_per_km == 0:
            return ()
        mean_gap = 1000.0 / cfg.density_per_km
        x = cfg.spawn_start
        while True:
            x += rng.exponential(mean_gap)
            if x > end:
                break
            crosses = bool(rng.random() < cfg.crossing_fraction)
            reveal = float(rng.uniform(cfg.reveal_min, cfg.reveal_max))
            out.append(Entity(len(out), float(x), 0.0, crosses, cfg.crossing_fraction, reveal))
    else:
        k = 0
        while True:
            x = cfg.spawn_start + k * cfg.obstacle_spacing
            if x > end:
                break
            x += float(rng.uniform(-0.25, 0.25)) * cfg.obstacle_spacing
            y = float(rng.uniform(-cfg.lateral_spread, cfg.lateral_spread))
            exists = bool(rng.random() >= cfg.false_positive_rate)
            reveal = float(rng.uniform(cfg.reveal_min, cfg.reveal_max))
            out.append(Entity(k, x, y, exists, 1.0 - cfg.false_positive_rate, reveal))
            k += 1
    return tuple(out)
