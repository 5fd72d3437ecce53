"""Batches of episodes over seeds, controllers and scenario cells.

A batch config is the scenario config plus a ``[batch]`` section and
optional ``[cell NAME]`` sections overriding scenario keys::

    [scenario]
    kind = pedestrian-acc
    duration = 300

    [batch]
    seeds = 0-19
    controllers = tree-full, tree-2, single

    [cell 80/km 25%]
    density_per_km = 80
    crossing_fraction = 0.25

Without cell sections the batch has one cell named ``default``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import re
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import acc
from ..slalom import MAX_UNCERTAIN
from ..solver import SolverConfig
from ..solver.config import ConfigError, read_config
from .controllers import parse_controller
from .episode import EpisodeMetrics, run_episode
from .scenario import ACC, ScenarioConfig

log = logging.getLogger(__name__)

CELL_PREFIX = "cell "
_SEED_RANGE = re.compile(r"^(\d+)(?:\s*-\s*(\d+))?$")


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0-3, 7"`` -> ``(0, 1, 2, 3, 7)``; order kept, duplicates dropped."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        m = _SEED_RANGE.match(part)
        if m is None:
            raise ConfigError(f"bad seed list entry {part!r}")
        lo = int(m.group(1))
        hi = lo if m.group(2) is None else int(m.group(2))
        if hi < lo:
            raise ConfigError(f"empty seed range {part!r}")
        out.extend(s for s in range(lo, hi + 1) if s not in out)
    if not out:
        raise ConfigError("empty seed list")
    return tuple(out)


@dataclass(frozen=True)
class Job:
    cell: str
    controller: str
    config: ScenarioConfig


@dataclass(frozen=True)
class BatchSpec:
    base: ScenarioConfig
    seeds: tuple[int, ...]
    controllers: tuple[str, ...]
    cells: tuple[tuple[str, ScenarioConfig], ...] = ()
    solver: Optional[SolverConfig] = None

    def __post_init__(self):
        if not self.controllers:
            raise ConfigError("no controllers given")
        for name in self.controllers:
            try:
                parse_controller(name)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if not self.cells:
            object.__setattr__(self, "cells", (("default", self.base),))

    @classmethod
    def from_parser(cls, parser) -> "BatchSpec":
        base = ScenarioConfig.from_parser(parser)
        batch = dict(parser["batch"]) if parser.has_section("batch") else {}
        unknown = set(batch) - {"seeds", "controllers"}
        if unknown:
            raise ConfigError(f"unknown batch keys {sorted(unknown)}")
        seeds = parse_seeds(batch.get("seeds", str(base.seed)))
        controllers = tuple(c.strip() for c in batch.get("controllers", "tree-full").split(",")
                            if c.strip())
        cells = []
        for section in parser.sections():
            if section.startswith(CELL_PREFIX):
                name = section[len(CELL_PREFIX):].strip()
                values = {k: v for k, v in parser[section].items()
                          if k not in parser.defaults()}
                merged = {**dict(parser["scenario"]), **values}
                cells.append((name, ScenarioConfig.from_mapping(merged)))
        has_solver = parser.has_section("solver") or parser.has_section("newton")
        solver = SolverConfig.from_parser(parser) if has_solver else None
        return cls(base, seeds, controllers, tuple(cells), solver)

    @classmethod
    def from_file(cls, path) -> "BatchSpec":
        return cls.from_parser(read_config(Path(path)))

    def jobs(self) -> list[Job]:
        """Cell-major, then seed, then controller; the order of the output rows."""
        return [
            Job(name, c, cfg.replace(seed=s))
            for name, cfg in self.cells
            for s in self.seeds
            for c in self.controllers
        ]


def effective_controller(name: str, cfg: ScenarioConfig) -> tuple:
    """Key under which two controller names produce the same episode."""
    spec = parse_controller(name)
    if spec.oracle:
        return ("oracle",)
    if cfg.kind == ACC:
        cap = spec.max_branches
        if cap is None:
            cap = acc.max_branch_count(cfg.density_per_km)
        return ("cap", cap)
    if spec.max_branches is None:
        return ("enumerate", MAX_UNCERTAIN)
    if spec.max_branches == 1:
        return ("single",)
    return ("enumerate", min(int(math.floor(math.log2(spec.max_branches))), MAX_UNCERTAIN))


@dataclass
class BatchRow:
    cell: str
    metrics: EpisodeMetrics
    error: str = ""


@dataclass
class BatchResult:
    rows: list[BatchRow] = field(default_factory=list)

    def summary(self) -> list[dict]:
        """Means per (cell, controller), in first-appearance order."""
        groups: dict[tuple[str, str], list[EpisodeMetrics]] = {}
        for r in self.rows:
            groups.setdefault((r.cell, r.metrics.controller), []).append(r)
        out = []
        for (cell, ctrl), rows in groups.items():
            ok = [r.metrics for r in rows if not r.error]
            out.append({
                "cell": cell,
                "controller": ctrl,
                "episodes": len(rows),
                "errors": len(rows) - len(ok),
                "mean_avg_cost": _mean(m.avg_cost for m in ok),
                "mean_avg_realized_cost": _mean(m.avg_realized_cost for m in ok),
                "mean_avg_speed": _mean(m.avg_speed for m in ok),
                "total_violations": sum(m.violations for m in ok),
                "total_collisions": sum(m.collisions for m in ok),
                "total_failures": sum(m.failures for m in ok),
                "mean_plan_ms": _mean(m.plan_ms_mean for m in ok),
            })
        return out


def _mean(values) -> float:
    v = list(values)
    return float(np.mean(v)) if v else math.nan


def _failed(job: Job, exc: BaseException) -> BatchRow:
    nan = math.nan
    m = EpisodeMetrics(job.config.kind, job.controller, job.config.seed, 0, nan, nan, nan, nan,
                       0, 0, 0, 0, nan, nan)
    return BatchRow(job.cell, m, f"{type(exc).__name__}: {exc}")


def _run_job(args) -> BatchRow:
    job, solver, workers = args
    try:
        m = run_episode(job.config, job.controller, solver, workers)
        return BatchRow(job.cell, m)
    except Exception as exc:  # one broken episode must not stop the batch
        log.error("episode %s/%s seed %d failed:\n%s", job.cell, job.controller,
                  job.config.seed, traceback.format_exc())
        return _failed(job, exc)


def run_batch(spec: BatchSpec, workers: int = 1, processes: int = 1,
              progress=None) -> BatchResult:
    """Run every job of ``spec``; rows come back in :meth:`BatchSpec.jobs` order.

    Controllers that resolve to the same planner in a cell (``tree-full``
    and ``tree-2`` at low density, say) share one episode. ``workers`` is
    the per-solve branch parallelism, ``processes`` the number of episodes
    run concurrently; neither changes the results.
    """
    jobs = spec.jobs()
    unique: dict[tuple, int] = {}
    plan: list[int] = []
    todo: list[Job] = []
    for job in jobs:
        key = (job.cell, job.config, effective_controller(job.controller, job.config))
        if key not in unique:
            unique[key] = len(todo)
            todo.append(job)
        plan.append(unique[key])
    args = [(j, spec.solver, workers) for j in todo]
    if processes > 1 and len(todo) > 1:
        with ProcessPoolExecutor(processes) as ex:
            done = []
            for row in ex.map(_run_job, args):
                done.append(row)
                if progress:
                    progress(len(done), len(todo))
    else:
        done = []
        for a in args:
            done.append(_run_job(a))
            if progress:
                progress(len(done), len(todo))
    rows = []
    for job, idx in zip(jobs, plan):
        src = done[idx]
        m = dataclasses.replace(src.metrics, controller=parse_controller(job.controller).name)
        rows.append(BatchRow(job.cell, m, src.error))
    return BatchResult(rows)


def run_cells(cells: Sequence[tuple[str, ScenarioConfig]], seeds: Sequence[int],
              controllers: Sequence[str], **kw) -> BatchResult:
    """Convenience wrapper building the :class:`BatchSpec` inline."""
    spec = BatchSpec(cells[0][1], tuple(seeds), tuple(controllers), tuple(cells))
    return run_batch(spec, **kw)
