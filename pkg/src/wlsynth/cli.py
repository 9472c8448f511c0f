"""Command-line pipeline driver.

Each stage is a subcommand reading and writing the CSV contracts of the
library modules, so any prefix of the pipeline can be resumed from its
artifacts.  All randomness flows from one --seed; each stage derives its own
generator by hashing the stage name.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import re
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

from .augmenter import AugmentConfig, HttpProvider, MockProvider, augment_catalog, write_attempt_log
from .catalog import SimulatedExecutor, load_catalog, save_catalog
from .config import Config, load_config
from .errors import ConfigError, WlsynthError
from .features import PerformanceFeature
from .metrics import report, write_report
from .scheduler import (
    SAConfig,
    assign_timestamps,
    random_schedule,
    read_schedule,
    write_schedule,
)
from .selector import (
    ONE_TO_MANY,
    ONE_TO_ONE,
    SelectionConstraints,
    build_problem,
    match_query,
    read_plans,
    solve_window,
    write_plan_summary,
    write_plans,
)
from .simulator import replay
from .trace import build_targets, export_trace, ingest_trace, read_targets, write_targets

log = logging.getLogger(__name__)

WINDOW_LEVEL = "window"
_DATA_FILES = ("demo_trace.csv", "demo_catalog.csv", "demo_config.txt")


def stage_seed(seed: int, stage: str) -> int:
    """Stable per-stage seed derived from the single pipeline seed."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).hexdigest()
    return int(digest[:16], 16)


class _Paths:
    """Output directory layout shared by all subcommands."""

    def __init__(self, out: str):
        self.root = Path(out)
        self.trace = self.root / "trace.csv"
        self.targets = self.root / "targets"
        self.plans = self.root / "plans"
        self.schedule = self.root / "schedule"
        self.replay = self.root / "replay"
        self.report = self.root / "report"
        self.augment = self.root / "augment"

    def ensure(self, *dirs: Path) -> None:
        for d in (self.root,) + dirs:
            d.mkdir(parents=True, exist_ok=True)

    def effective_catalog(self, explicit: str | None):
        """Augmented catalog when one was produced, otherwise the one given."""
        augmented = self.augment / "catalog.csv"
        if augmented.exists():
            return augmented
        if explicit is None:
            raise ConfigError("--catalog is required (no augmented catalog found)")
        return explicit


def _build_config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    overrides = {
        "seed": args.seed,
        "window_ms": getattr(args, "window_ms", None),
        "interval_ms": getattr(args, "interval_ms", None),
        "cores": getattr(args, "cores", None),
        "y": getattr(args, "y", None),
        "z": getattr(args, "z", None),
    }
    for key, value in overrides.items():
        if value is not None:
            cfg.set(key, value)
    return cfg


def _read_trace(cfg: Config, paths: _Paths, args):
    path = getattr(args, "trace", None) or paths.trace
    if not Path(path).exists():
        raise ConfigError(f"no trace at {path}; pass --trace or run 'ingest' first")
    return ingest_trace(path, cfg.schema(), cfg.mode())


def _read_targets(cfg: Config, paths: _Paths):
    windows_path = paths.targets / "windows.csv"
    intervals_path = paths.targets / "intervals.csv"
    if not windows_path.exists():
        raise ConfigError(f"no targets at {windows_path}; run 'targets' first")
    return read_targets(windows_path, intervals_path, cfg.schema())


def _constraints(cfg: Config) -> SelectionConstraints:
    return SelectionConstraints(
        max_repetitions=cfg.get_int("y"),
        max_total=cfg.get_optional_int("z"),
        total_per_query_factor=cfg.get_float("z_per_query_factor"),
        max_concurrency=cfg.get_int("cores"),
        denom_floor=cfg.get_float("denom_floor"),
        node_limit=cfg.get_int("solver.node_limit"),
        time_limit_s=cfg.get_optional_float("solver.time_limit_s"),
    )


def _solve_windows(targets, catalog, constraints, jobs: int):
    problems = [build_problem(t, catalog, constraints) for t in targets]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(solve_window, problems))
    return [solve_window(p) for p in problems]


_TARGET_LINE_RE = re.compile(r"TARGET FEATURE:\n  (?P<body>[^\n]*)")
_PAIR_RE = re.compile(r"(\w+)=([-+0-9.eE]+)")


def echo_policy(prompt: str, calls: int) -> str:
    """Default mock-provider policy: answer with a query annotated to profile
    exactly at the prompt's target feature.  Keeps the bundled demo closed."""
    match = _TARGET_LINE_RE.search(prompt)
    pairs = dict(_PAIR_RE.findall(match.group("body"))) if match else {}
    body = "; ".join(f"{k}={v}" for k, v in sorted(pairs.items()))
    return f"SELECT 1 /* profile: duration_ms=30000; {body}; */"


def _provider(cfg: Config):
    kind = cfg.get("provider.kind")
    if kind == "mock":
        return MockProvider(echo_policy)
    if kind == "http":
        endpoint = cfg.get("provider.endpoint")
        if not endpoint:
            raise ConfigError("provider.endpoint is required when provider.kind = http")
        return HttpProvider(endpoint, cfg.get_int("provider.timeout_ms"))
    raise ConfigError(f"provider.kind must be 'mock' or 'http', got {kind!r}")


def _sa_config(cfg: Config) -> SAConfig:
    return SAConfig(
        no_improve_limit=cfg.get_int("sa.no_improve"),
        max_steps=cfg.get_int("sa.max_steps"),
        move_granularity_ms=cfg.get_int("sa.move_granularity_ms"),
        denom_floor=cfg.get_float("denom_floor"),
    )


def cmd_ingest(cfg: Config, paths: _Paths, args) -> None:
    if args.trace is None:
        raise ConfigError("ingest requires --trace")
    trace = ingest_trace(args.trace, cfg.schema(), cfg.mode())
    paths.ensure()
    export_trace(trace, paths.trace)
    log.info("ingested %d records -> %s", len(trace.records), paths.trace)


def cmd_targets(cfg: Config, paths: _Paths, args) -> None:
    trace = _read_trace(cfg, paths, args)
    windows, intervals = build_targets(
        trace, cfg.get_int("window_ms"), cfg.get_int("interval_ms")
    )
    paths.ensure(paths.targets)
    write_targets(windows, intervals, paths.targets / "windows.csv",
                  paths.targets / "intervals.csv", cfg.schema())
    log.info("wrote %d windows, %d intervals", len(windows), len(intervals))


def cmd_select(cfg: Config, paths: _Paths, args) -> None:
    windows, _ = _read_targets(cfg, paths)
    catalog = load_catalog(args.catalog, cfg.schema())
    paths.ensure(paths.plans)
    if args.query_level != WINDOW_LEVEL:
        trace = _read_trace(cfg, paths, args)
        with open(paths.plans / "query_matches.csv", "w", encoding="utf-8") as fh:
            fh.write("query_id,component_id,count,objective\n")
            for rec in trace.records:
                plan = match_query(
                    PerformanceFeature(rec.metrics, rec.operators), catalog,
                    mode=args.query_level, denom_floor=cfg.get_float("denom_floor"),
                )
                for cid in sorted(plan.counts):
                    fh.write(f"{rec.query_id},{cid},{plan.counts[cid]},"
                             f"{plan.objective_value!r}\n")
        log.info("matched %d queries (%s)", len(trace.records), args.query_level)
    plans = _solve_windows(windows, catalog, _constraints(cfg), args.jobs)
    write_plans(plans, paths.plans / "plan.csv")
    write_plan_summary(plans, windows, cfg.schema(), paths.plans / "summary.csv")
    log.info("solved %d windows", len(plans))


def cmd_augment(cfg: Config, paths: _Paths, args) -> None:
    trace = _read_trace(cfg, paths, args)
    windows, _ = _read_targets(cfg, paths)
    catalog = load_catalog(args.catalog, cfg.schema())
    plans = read_plans(paths.plans / "plan.csv", windows, catalog,
                       cfg.get_float("denom_floor"))
    augment_cfg = AugmentConfig(
        k=cfg.get_int("augment.k"),
        examples_per_side=cfg.get_int("augment.examples_per_side"),
        accept_threshold=cfg.get_float("augment.accept_threshold"),
        max_attempts=cfg.get_int("augment.max_attempts"),
        max_db_switches=cfg.get_int("augment.max_db_switches"),
        bad_window_threshold=cfg.get_float("augment.bad_window_threshold"),
        cpu_dimension=cfg.get("augment.cpu_dimension"),
        sb_dimension=cfg.get("augment.sb_dimension"),
    )
    executor = SimulatedExecutor(cfg.schema())
    augmented, reports = augment_catalog(
        trace, plans, windows, catalog, _provider(cfg), executor,
        config=augment_cfg, seed=stage_seed(cfg.get_int("seed"), "augment"),
    )
    paths.ensure(paths.augment, paths.plans)
    save_catalog(augmented, paths.augment / "catalog.csv")
    write_attempt_log(reports, paths.augment / "attempts.jsonl")
    plans = _solve_windows(windows, augmented, _constraints(cfg), args.jobs)
    write_plans(plans, paths.plans / "plan.csv")
    write_plan_summary(plans, windows, cfg.schema(), paths.plans / "summary.csv")
    accepted = sum(1 for r in reports if r.accepted)
    log.info("augmentation: %d/%d targets accepted, plans re-solved",
             accepted, len(reports))


def cmd_schedule(cfg: Config, paths: _Paths, args) -> None:
    windows, intervals = _read_targets(cfg, paths)
    catalog = load_catalog(paths.effective_catalog(args.catalog), cfg.schema())
    plans = read_plans(paths.plans / "plan.csv", windows, catalog,
                       cfg.get_float("denom_floor"))
    paths.ensure(paths.schedule)
    seed = stage_seed(cfg.get_int("seed"), "schedule")
    if args.skip_ta:
        schedule = random_schedule(
            plans, intervals, seed, cfg.get_int("sa.move_granularity_ms")
        )
        trace_rows = []
    else:
        result = assign_timestamps(
            plans, intervals, catalog, _sa_config(cfg),
            rng_seed=seed, cores=cfg.get_int("cores"),
        )
        schedule = result.schedule
        trace_rows = list(enumerate(result.best_energy_trace))
        log.info("annealed %d steps: energy %.6g -> %.6g",
                 result.steps, result.initial_energy, result.best_energy)
    write_schedule(schedule, paths.schedule / "schedule.csv")
    with open(paths.schedule / "energy.csv", "w", encoding="utf-8") as fh:
        fh.write("step,best_energy\n")
        for step, value in trace_rows:
            fh.write(f"{step},{value!r}\n")


def cmd_replay(cfg: Config, paths: _Paths, args) -> None:
    catalog = load_catalog(paths.effective_catalog(args.catalog), cfg.schema())
    schedule = read_schedule(paths.schedule / "schedule.csv")
    replayed = replay(schedule, catalog, cfg.get_int("cores"), cfg.mode())
    paths.ensure(paths.replay)
    export_trace(replayed, paths.replay / "trace.csv")
    log.info("replayed %d instances", len(replayed.records))


def cmd_evaluate(cfg: Config, paths: _Paths, args) -> None:
    windows, intervals = _read_targets(cfg, paths)
    replayed_path = paths.replay / "trace.csv"
    if not replayed_path.exists():
        raise ConfigError(f"no replayed trace at {replayed_path}; run 'replay' first")
    replayed = ingest_trace(replayed_path, cfg.schema(), cfg.mode())
    rep = report(windows, intervals, replayed, cfg.get_float("metrics_eps"))
    paths.ensure(paths.report)
    write_report(rep, paths.report / "scores.csv", paths.report / "plot_data.csv")
    for level, dim, name, value, _ in rep.rows():
        print(f"{level:8s} {dim:20s} {name:6s} {value:.6g}")


def cmd_pipeline(cfg: Config, paths: _Paths, args) -> None:
    cmd_ingest(cfg, paths, args)
    cmd_targets(cfg, paths, args)
    cmd_select(cfg, paths, args)
    if not args.skip_augment:
        cmd_augment(cfg, paths, args)
    cmd_schedule(cfg, paths, args)
    cmd_replay(cfg, paths, args)
    cmd_evaluate(cfg, paths, args)


def cmd_demo(cfg: Config, paths: _Paths, args) -> None:
    """Copy the bundled demo trace, catalog and config into the output dir."""
    paths.ensure()
    for name in _DATA_FILES:
        with resources.as_file(resources.files("wlsynth.data") / name) as src:
            shutil.copy(src, paths.root / name)
    print(f"demo inputs written to {paths.root}")
    print(f"run: wlsynth pipeline --config {paths.root / 'demo_config.txt'} "
          f"--trace {paths.root / 'demo_trace.csv'} "
          f"--catalog {paths.root / 'demo_catalog.csv'} --out {paths.root / 'out'}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--window-ms", type=int, default=None, dest="window_ms")
    common.add_argument("--interval-ms", type=int, default=None, dest="interval_ms")
    common.add_argument("--cores", type=int, default=None)
    common.add_argument("--y", type=int, default=None,
                        help="max repetitions of one component per window")
    common.add_argument("--z", type=int, default=None,
                        help="max total instances per window")
    common.add_argument("--jobs", type=int, default=1,
                        help="parallel window solves (default: 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="wlsynth",
        description="Assemble runnable synthetic workloads that replay like a target trace.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, trace=False, catalog=False, extra=None):
        p = sub.add_parser(name, parents=[common], help=help_text)
        if trace:
            p.add_argument("--trace", help="input trace CSV")
        if catalog:
            p.add_argument("--catalog", help="component catalog CSV")
        if extra:
            extra(p)
        p.set_defaults(fn=fn)
        return p

    add("ingest", cmd_ingest, "validate a trace and normalize it into the output dir",
        trace=True)
    add("targets", cmd_targets, "aggregate the trace into window/interval targets",
        trace=True)

    def select_extra(p):
        p.add_argument("--query-level", default=WINDOW_LEVEL,
                       choices=[WINDOW_LEVEL, ONE_TO_ONE, ONE_TO_MANY],
                       help="window-level selection (default) or per-query matching")

    add("select", cmd_select, "pick component counts per window", trace=True,
        catalog=True, extra=select_extra)
    add("augment", cmd_augment, "generate components for badly-fit windows and re-solve",
        trace=True, catalog=True)

    def schedule_extra(p):
        p.add_argument("--skip-ta", action="store_true",
                       help="random start times instead of annealing")

    add("schedule", cmd_schedule, "assign start timestamps inside each window",
        catalog=True, extra=schedule_extra)
    add("replay", cmd_replay, "simulate the schedule into a replayed trace",
        catalog=True)
    add("evaluate", cmd_evaluate, "score the replayed trace against the targets")

    def pipeline_extra(p):
        p.add_argument("--skip-ta", action="store_true")
        p.add_argument("--skip-augment", action="store_true")
        p.add_argument("--query-level", default=WINDOW_LEVEL,
                       choices=[WINDOW_LEVEL, ONE_TO_ONE, ONE_TO_MANY])

    add("pipeline", cmd_pipeline, "run every stage end to end", trace=True,
        catalog=True, extra=pipeline_extra)
    add("demo", cmd_demo, "materialize the bundled demo inputs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    cfg = _build_config(args)
    paths = _Paths(args.out)
    try:
        args.fn(cfg, paths, args)
    except WlsynthError as exc:
        print(json.dumps({
            "stage": args.command,
            "error": type(exc).__name__,
            "message": str(exc),
        }), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
