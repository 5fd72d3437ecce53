"""Command-line entry point.

``controltrees plan|episode|batch|scale-bench``. Every command validates its
inputs before writing anything. With ``--out DIR`` the data files are
written atomically into ``DIR`` together with ``timing.csv`` (wall-clock
measurements) and ``meta.json`` (timestamps, versions). Data files never
contain timings, so identical runs give byte-identical data files.
Without ``--out`` the main table goes to stdout.

Exit codes: 0 success, 1 usage or configuration error, 2 solve failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bench import ScaleRow, linear_fit, scale_bench
from .scenefile import load_scene, plan_scene
from .sim.batch import BatchSpec, run_batch
from .sim.controllers import parse_controller
from .sim.episode import ACC_TRACE_HEADER, SLALOM_TRACE_HEADER, EpisodeMetrics, run_episode
from .sim.scenario import ACC, ScenarioConfig
from .solver import SolverConfig
from .solver.config import ConfigError, read_config
from .solver.dal import SolverError

log = logging.getLogger("controltrees")

EXIT_OK, EXIT_USAGE, EXIT_SOLVE = 0, 1, 2
DEFAULT_COUNTS = (2, 5, 10, 25, 50, 100)

# metric columns renamed to carry their unit; counts keep their names
METRIC_UNITS = {
    "steps": "steps_count",
    "avg_cost": "avg_cost_per_step",
    "avg_realized_cost": "avg_realized_cost_per_step",
    "avg_speed": "avg_speed_mps",
    "distance": "distance_m",
    "plan_ms_mean": "plan_time_mean_ms",
    "plan_ms_p95": "plan_time_p95_ms",
}
SUMMARY_UNITS = {
    "mean_avg_cost": "mean_avg_cost_per_step",
    "mean_avg_realized_cost": "mean_avg_realized_cost_per_step",
    "mean_avg_speed": "mean_avg_speed_mps",
    "mean_plan_ms": "mean_plan_time_ms",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting with status 2, which is reserved for solve failures."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class RunSpec:
    subcommand: str
    config: Optional[Path] = None
    controller: Optional[str] = None
    out: Optional[Path] = None
    seed: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")
        if self.config is not None and not os.access(self.config, os.R_OK):
            raise UsageError(f"config file {self.config} is not readable")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _units(header, mapping) -> list[str]:
    return [mapping.get(h, h) for h in header]


class Output:
    """Collects files and writes them in one go."""

    def __init__(self, spec: RunSpec, argv: Sequence[str]):
        self.spec = spec
        self.files: dict[str, str] = {}
        self.timing: Optional[str] = None
        self.meta = {
            "command": spec.subcommand,
            "argv": list(argv),
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "started_utc": _now(),
        }

    def add(self, name: str, text: str):
        self.files[name] = text

    def commit(self, stdout_name: str):
        self.meta["finished_utc"] = _now()
        out = self.spec.out
        if out is None:
            sys.stdout.write(self.files[stdout_name])
            return
        files = dict(self.files)
        if self.timing is not None:
            files["timing.csv"] = self.timing
        files["meta.json"] = json.dumps(self.meta, indent=2, sort_keys=True) + "\n"
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=out))
        try:
            for name, text in files.items():
                (tmp / name).write_text(text)
            for name in files:
                os.replace(tmp / name, out / name)
        finally:
            shutil.rmtree(tmp, ignore_errors=True)
        log.info("wrote %s to %s", ", ".join(sorted(files)), out)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _scenario(spec: RunSpec) -> tuple[ScenarioConfig, Optional[SolverConfig]]:
    parser = read_config(spec.config)
    cfg = ScenarioConfig.from_parser(parser)
    if spec.seed is not None:
        cfg = cfg.replace(seed=spec.seed)
    has_solver = parser.has_section("solver") or parser.has_section("newton")
    return cfg, SolverConfig.from_parser(parser) if has_solver else None


def cmd_plan(spec: RunSpec, out: Output) -> int:
    scene = load_scene(spec.config)
    tree, report, header, rows = plan_scene(scene, spec.workers)
    out.add("tree.csv", csv_text(header, rows))
    out.add("residuals.csv", report.to_csv(timings=False))
    out.timing = csv_text(
        ("iteration", "distributed_phase_s", "consensus_phase_s"),
        [(r[0], r[5], r[6]) for r in report.rows(timings=True)],
    )
    out.meta.update(iterations=report.iterations, converged=report.converged,
                    branches=len(tree.branches), solve_s=report.wall_time)
    if not report.converged:
        log.warning("solver stopped after %d iterations without meeting the tolerances; "
                    "the best iterate is reported", report.iterations)
    out.commit("tree.csv")
    return EXIT_OK


def cmd_episode(spec: RunSpec, out: Output) -> int:
    cfg, solver = _scenario(spec)
    controller = spec.controller or "tree-full"
    m = run_episode(cfg, controller, solver, spec.workers, keep_trace=True)
    header = EpisodeMetrics.header(timings=False)
    out.add("metrics.csv", csv_text(_units(header, METRIC_UNITS), [m.row(timings=False)]))
    trace_header = ACC_TRACE_HEADER if cfg.kind == ACC else SLALOM_TRACE_HEADER
    out.add("trace.csv", csv_text(trace_header, m.trace))
    out.timing = csv_text(_units(EpisodeMetrics.TIMING_FIELDS, METRIC_UNITS),
                          [(m.plan_ms_mean, m.plan_ms_p95)])
    out.commit("metrics.csv")
    return EXIT_OK


def cmd_batch(spec: RunSpec, out: Output, processes: int = 1) -> int:
    parser = read_config(spec.config)
    if spec.seed is not None:
        if not parser.has_section("batch"):
            parser.add_section("batch")
        parser["batch"]["seeds"] = str(spec.seed)
    if spec.controller:
        if not parser.has_section("batch"):
            parser.add_section("batch")
        parser["batch"]["controllers"] = spec.controller
    bspec = BatchSpec.from_parser(parser)
    total = len(bspec.jobs())

    def progress(done, todo):
        log.info("episode %d/%d", done, todo)

    result = run_batch(bspec, spec.workers, processes, progress)
    header = ("cell",) + EpisodeMetrics.header(timings=False) + ("error",)
    rows = [(r.cell, *r.metrics.row(timings=False), r.error) for r in result.rows]
    out.add("episodes.csv", csv_text(_units(header, METRIC_UNITS), rows))
    summary = result.summary()
    timing_keys = ("mean_plan_ms",)
    s_header = [k for k in summary[0] if k not in timing_keys]
    out.add("summary.csv", csv_text(_units(s_header, SUMMARY_UNITS),
                                    [[s[k] for k in s_header] for s in summary]))
    out.timing = csv_text(
        _units(("cell", "controller", "seed", "plan_ms_mean", "plan_ms_p95"), METRIC_UNITS),
        [(r.cell, r.metrics.controller, r.metrics.seed, r.metrics.plan_ms_mean,
          r.metrics.plan_ms_p95) for r in result.rows],
    )
    errors = sum(bool(r.error) for r in result.rows)
    out.meta.update(episodes=total, failed_episodes=errors)
    if errors:
        log.warning("%d of %d episodes failed; see the error column", errors, total)
    out.commit("summary.csv")
    return EXIT_OK


def _bench_settings(spec: RunSpec, counts, repetitions):
    seed = 0
    if spec.config is not None:
        parser = read_config(spec.config)
        if parser.has_section("bench"):
            sec = parser["bench"]
            unknown = set(sec) - {"counts", "repetitions", "seed"} - set(parser.defaults())
            if unknown:
                raise ConfigError(f"unknown bench keys {sorted(unknown)}")
            try:
                if counts is None and "counts" in sec:
                    counts = _int_list(sec["counts"])
                if repetitions is None and "repetitions" in sec:
                    repetitions = int(sec["repetitions"])
                seed = int(sec.get("seed", seed))
            except ValueError as exc:
                raise ConfigError(f"bad [bench] value: {exc}") from exc
    if spec.seed is not None:
        seed = spec.seed
    counts = DEFAULT_COUNTS if counts is None else counts
    repetitions = 3 if repetitions is None else repetitions
    if not counts or min(counts) < 1:
        raise UsageError("branch counts must be >= 1")
    if repetitions < 1:
        raise UsageError("--repetitions must be >= 1")
    return tuple(counts), repetitions, seed


def cmd_scale_bench(spec: RunSpec, out: Output, counts=None, repetitions=None,
                    generic: bool = False) -> int:
    counts, repetitions, seed = _bench_settings(spec, counts, repetitions)
    rows = scale_bench(counts, repetitions, seed, generic=generic)
    h = ScaleRow.HEADER
    timing_cols = ("decomposed_ms", "decomposed_iter_ms", "joint_ms", "joint_iter_ms")
    data_cols = [c for c in h if c not in timing_cols]
    as_dict = [dict(zip(h, r.row())) for r in rows]
    data = csv_text(data_cols, [[d[c] for c in data_cols] for d in as_dict])
    full = csv_text(h, [r.row() for r in rows])
    if spec.out is None:
        out.add("scale.csv", full)
    else:
        out.add("scale.csv", data)
        out.timing = csv_text(("n_branches",) + timing_cols,
                              [[d["n_branches"]] + [d[c] for c in timing_cols] for d in as_dict])
    if len(rows) >= 2:
        a, b, r2 = linear_fit([r.n_branches for r in rows], [r.decomposed_iter_ms for r in rows])
        out.meta.update(fit_intercept_ms=a, fit_slope_ms_per_branch=b, fit_r2=r2)
        log.info("decomposed per-iteration time: %.3f + %.4f N ms (R^2 = %.4f)", a, b, r2)
    out.meta.update(seed=seed, repetitions=repetitions)
    out.commit("scale.csv")
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    return [int(p) for p in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="controltrees", description="Control-tree MPC experiments.")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(sp, config_required=True, seed=True):
        sp.add_argument("--config", type=Path, required=config_required,
                        help="configuration file (INI sections)")
        sp.add_argument("--out", type=Path, help="output directory (default: stdout)")
        sp.add_argument("--workers", type=int, default=1,
                        help="parallel branch solves per planning step")
        sp.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for progress, -vv for debug logging")
        if seed:
            sp.add_argument("--seed", type=int, help="override the configured seed")

    common(sub.add_parser("plan", help="solve one scene and dump the tree"), seed=False)
    ep = sub.add_parser("episode", help="simulate one closed-loop episode")
    common(ep)
    ep.add_argument("--controller", default="tree-full",
                    help="tree-full, tree-N, single or oracle")
    bp = sub.add_parser("batch", help="episodes over seeds, controllers and cells")
    common(bp)
    bp.add_argument("--controller", help="comma-separated controllers (overrides [batch])")
    bp.add_argument("--processes", type=int, default=1, help="episodes run concurrently")
    sb = sub.add_parser("scale-bench", help="decomposed versus joint solve timing")
    common(sb, config_required=False)
    sb.add_argument("--counts", type=_int_list, help="branch counts, e.g. 2,5,10")
    sb.add_argument("--repetitions", type=int, help="timed repetitions (best is kept)")
    sb.add_argument("--generic", action="store_true",
                    help="use the interpreted solver path on the decomposed side")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr,
    )
    try:
        controller = getattr(args, "controller", None)
        if args.subcommand == "episode":
            parse_controller(controller)
        spec = RunSpec(args.subcommand, args.config, controller, args.out,
                       getattr(args, "seed", None), args.workers)
        out = Output(spec, argv)
        if args.subcommand == "plan":
            return cmd_plan(spec, out)
        if args.subcommand == "episode":
            return cmd_episode(spec, out)
        if args.subcommand == "batch":
            if args.processes < 1:
                raise UsageError("--processes must be >= 1")
            return cmd_batch(spec, out, args.processes)
        return cmd_scale_bench(spec, out, args.counts, args.repetitions, args.generic)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # bad controller names and scene values surface as ValueError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_SOLVE


if __name__ == "__main__":
    sys.exit(main())
