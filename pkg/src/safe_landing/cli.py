"""Command-line interface.

    safe-landing run --scenario FILE [--seed N] [--out DIR] [--trace [FILE]]
    safe-landing batch --scenario FILE --trials 200 [--seed-base 0] [--jobs 4] --out DIR
    safe-landing report --in DIR [--out report.csv]
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import (
    BatchSummary,
    EmptyInput,
    Outcome,
    default_jobs,
    digitize_latency_report,
    read_latencies,
    run_batch,
    run_trial,
    write_batch,
)
from .scenario import Scenario, ScenarioError

log = logging.getLogger("safe_landing")


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = Scenario.load(args.scenario)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    trace_path = args.trace
    if trace_path is True:
        if args.out is None:
            log.error("--trace without a file name needs --out")
            return 2
        trace_path = Path(args.out) / "trace.csv"
    if trace_path:
        Path(trace_path).parent.mkdir(parents=True, exist_ok=True)
        with open(trace_path, "w", newline="", encoding="utf-8") as fh:
            result = run_trial(scenario, trace=fh)
    else:
        result = run_trial(scenario)
    if args.out is not None:
        write_batch(BatchSummary([result]), args.out)
    print(
        f"seed={result.seed} outcome={result.outcome.value} duration={result.duration:.1f}s "
        f"incursions={result.incursions} undetected={result.undetected} reroutes={result.reroutes}"
    )
    # any completed trial is a success for the tool; only an abort is an error
    return 2 if result.outcome is Outcome.ABORTED else 0


def _cmd_batch(args: argparse.Namespace) -> int:
    scenario = Scenario.load(args.scenario)
    jobs = args.jobs if args.jobs else default_jobs()
    summary = run_batch(scenario, args.trials, args.seed_base, jobs, args.out)
    for key, value in summary.rows():
        print(f"{key}: {value}")
    if summary.count(Outcome.ABORTED) * 2 > summary.n:
        log.error("most trials aborted")
        return 2
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    src = Path(args.input)
    if src.is_dir():
        src = src / "latencies.csv"
    try:
        report = digitize_latency_report(read_latencies(src))
    except EmptyInput as exc:
        log.error("%s", exc)
        return 1
    if args.out:
        report.write(args.out)
    print(f"p50={report.p50:.3f}s p90={report.p90:.3f}s p95={report.p95:.3f}s p99={report.p99:.3f}s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safe-landing", description="Semantic safe-landing simulation")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="fly one trial")
    run.add_argument("--scenario", required=True, help="scenario YAML/JSON file")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="directory for trials.csv, latencies.csv and summary.csv")
    run.add_argument(
        "--trace", nargs="?", const=True, help="write a per-tick CSV trace (default: OUT/trace.csv)"
    )
    run.set_defaults(func=_cmd_run)

    batch = sub.add_parser("batch", help="run seeded trials and write CSV results")
    batch.add_argument("--scenario", required=True)
    batch.add_argument("--trials", type=int, default=200)
    batch.add_argument("--seed-base", type=int, default=0)
    batch.add_argument("--jobs", type=int, default=0, help="worker processes (default: CPU count)")
    batch.add_argument("--out", required=True, help="output directory")
    batch.set_defaults(func=_cmd_batch)

    report = sub.add_parser("report", help="histogram and percentiles of intervention latency")
    report.add_argument("--in", dest="input", required=True, help="batch output directory or latencies.csv")
    report.add_argument("--out", help="report CSV")
    report.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
