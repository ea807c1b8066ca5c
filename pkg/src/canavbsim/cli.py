"""Command-line entry point: run one scenario or the four-arm experiment suite."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .core import SimulationError
from .metrics import export_csv, format_summary
from .scenario import (
    ConfigError,
    ScenarioConfig,
    load_config,
    parse_duration,
    run_experiment_suite,
    run_scenario,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canavbsim",
        description="Deterministic CAN / Ethernet-AVB network simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario from a config file")
    run_p.add_argument("config", help="scenario config file (sectioned key=value)")
    run_p.add_argument("--seed", type=int, help="override sim.seed")
    run_p.add_argument("--duration", help="override sim.duration (e.g. 1s, 500ms)")
    run_p.add_argument("--trace", action="store_true", help="write per-event trace.csv")
    run_p.add_argument(
        "--queue-trace", action="store_true", help="write per-port queue_trace.csv"
    )
    run_p.add_argument("--out", help="output directory (default: config's output.dir or '.')")

    suite_p = sub.add_parser("suite", help="run the four experiment arms")
    suite_p.add_argument("config", nargs="?", help="optional base config file")
    suite_p.add_argument("--seed", type=int, help="override sim.seed")
    suite_p.add_argument("--duration", help="override sim.duration (e.g. 1s, 500ms)")
    suite_p.add_argument("--out", help="output directory (default: config's output.dir or '.')")
    return parser


def _load(args: argparse.Namespace) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.duration is not None:
        cfg.duration = parse_duration(args.duration)
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _out_dir(cfg: ScenarioConfig) -> Path:
    out = Path(cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    result = run_scenario(
        cfg,
        trace_path=out / "trace.csv" if args.trace else None,
        depth_trace_path=out / "queue_trace.csv" if args.queue_trace else None,
    )
    csv_path = out / f"latency_{result.arm}.csv"
    export_csv(result.records, csv_path)
    print(format_summary(result.arm, result.summary))
    print(f"events dispatched: {result.stats.events_dispatched}")
    print(f"wrote {csv_path}")
    return 0


def _cmd_suite(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    suite = run_experiment_suite(cfg, out)
    print(suite.table)
    for arm, path in suite.csv_paths.items():
        print(f"wrote {path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_suite(args)
    except ConfigError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
