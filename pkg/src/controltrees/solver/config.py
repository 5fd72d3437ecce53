"""Solver settings and their ``key = value`` file form."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    max_inner_iters: int = 50
    grad_tol: float = 1e-6
    backtrack: float = 0.5
    armijo: float = 1e-4
    damping_floor: float = 1e-9
    min_step: float = 1e-10
    # stop once a full step moves no coordinate by more than this
    step_tol: float = 1e-9

    def __post_init__(self):
        _normalize_types(self)
        if self.max_inner_iters < 1:
            raise ConfigError("max_inner_iters must be >= 1")
        for name in ("grad_tol", "armijo", "damping_floor", "min_step", "step_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.backtrack < 1.0:
            raise ConfigError("backtrack must lie in (0, 1)")


@dataclass(frozen=True)
class SolverConfig:
    """Penalties, termination thresholds and iteration caps.

    ``literal_indicator`` switches the inequality penalty to the bare
    ``[g > 0]`` activation instead of ``[g > 0 or lambda > 0]``.
    ``weighted_consensus`` averages trunks by branch weight instead of
    uniformly; it is experimental and off by default.
    """

    mu: float = 1.0
    nu: float = 1.0
    rho: float = 1.0
    eps_pri: float = 1e-3
    eps_dual: float = 1e-3
    xi_pri: float = 1e-3
    xi_dual: float = 1e-3
    max_outer_iters: int = 100
    literal_indicator: bool = False
    weighted_consensus: bool = False
    newton: NewtonConfig = field(default_factory=NewtonConfig)

    def __post_init__(self):
        _normalize_types(self)
        for name in ("mu", "nu", "rho", "eps_pri", "eps_dual", "xi_pri", "xi_dual"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_outer_iters < 1:
            raise ConfigError("max_outer_iters must be >= 1")

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, solver: Mapping[str, Any] = None, newton: Mapping[str, Any] = None):
        return cls(
            **_coerce(cls, solver or {}, skip=("newton",)),
            newton=NewtonConfig(**_coerce(NewtonConfig, newton or {})),
        )

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser) -> "SolverConfig":
        solver = dict(parser["solver"]) if parser.has_section("solver") else {}
        newton = dict(parser["newton"]) if parser.has_section("newton") else {}
        return cls.from_mapping(solver, newton)

    @classmethod
    def from_file(cls, path) -> "SolverConfig":
        return cls.from_parser(read_config(path))

    def to_text(self) -> str:
        lines = ["[solver]"]
        for f in dataclasses.fields(self):
            if f.name != "newton":
                lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        lines += ["", "[newton]"]
        for f in dataclasses.fields(self.newton):
            lines.append(f"{f.name} = {_fmt(getattr(self.newton, f.name))}")
        return "\n".join(lines) + "\n"


def _normalize_types(obj) -> None:
    """Store numeric fields with their declared type (``mu=10`` becomes ``10.0``).

    Compiled kernels specialise on argument types, so an int penalty would
    otherwise trigger a fresh compilation.
    """
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(f.default, bool) or isinstance(v, bool):
            continue
        if isinstance(f.default, float) and isinstance(v, (int, np.integer, np.floating)):
            object.__setattr__(obj, f.name, float(v))
        elif isinstance(f.default, int) and isinstance(v, (np.integer, float)) and float(v).is_integer():
            object.__setattr__(obj, f.name, int(v))


def read_config(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return parser


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(cls, raw: Mapping[str, Any], skip=()) -> dict:
    """Convert string values to the dataclass field types."""
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    out = {}
    for key, val in raw.items():
        if key not in fields:
            raise ConfigError(f"unknown {cls.__name__} key {key!r}")
        default = fields[key].default
        try:
            out[key] = parse_value(val, type(default))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {val!r}") from exc
    return out


def parse_value(val, typ):
    if not isinstance(val, str):
        return typ(val)
    s = val.strip()
    if typ is bool:
        low = s.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(s)
    if typ is int:
        return int(s)
    if typ is float:
        return float(s)
    return s
