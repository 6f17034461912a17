#!/usr/bin/env python3
"""
Command-line entry point for the LEI edge orchestrator.

Examples:
  python cli.py run                          # all four steps, then the report
  python cli.py --data-type soil run
  python cli.py --fixture-dir fixtures/air_quality run
  python cli.py validate                     # step 3 against existing scripts
  python cli.py report --run-id 3
  python cli.py ingest --count 5 --refresh-sample
  python cli.py monitor --samples 12

Exit codes: 0 success, 2 failed step or halted run, 1 configuration error.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from clock import SystemClock, TickingClock, parse_timestamp
from config import Paths, load_config, resolve_domain_paths, setup_logging
from errors import ConfigError, InvariantViolation, LeiError, MissingFile
from ingestion import FixtureFetcher, build_source_poller, refresh_sample
from metrics_publisher import publish_report
from models import STEPS
from pipeline import Pipeline
from resource_monitor import ResourceMonitor, StaticProbe

logger = logging.getLogger("lei.cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILED = 2

STEP_COMMANDS = {"task-gen": "s1", "code-gen": "s2", "validate": "s3", "execute": "s4"}

# Probes selectable with --test-probe
TEST_PROBES = {
    "static": lambda: StaticProbe(),
    "busy": lambda: StaticProbe(cpu_pct=99.0, mem_used_pct=95.0, mem_available_mb=64.0),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lei",
        description="LEI edge orchestrator: LLM-generated analytics for edge devices",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__.split("Examples:")[1],
    )
    parser.add_argument("--config", default=Paths.DEFAULT_CONFIG_FILE, help="Pipeline config file (default: lei.conf)")
    parser.add_argument("--data-type", help="Domain to run (overrides the config file)")
    parser.add_argument("--fixture-dir", help="Replay LLM responses from this fixture folder")
    parser.add_argument("--report-out", help="Where to write report.json")
    parser.add_argument("--log-level", help="Logging level (default: LOG_LEVEL or INFO)")
    # Determinism hooks for tests
    parser.add_argument("--test-clock", help=argparse.SUPPRESS)
    parser.add_argument("--test-probe", choices=sorted(TEST_PROBES), help=argparse.SUPPRESS)

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("run", help="Run all four steps and write the report")
    commands.add_parser("task-gen", help="Step 1: propose new tasks")
    commands.add_parser("code-gen", help="Step 2: generate scripts for new_tasks.json")
    commands.add_parser("validate", help="Step 3: validate generated scripts")
    commands.add_parser("execute", help="Step 4: execute the repository on the raw data")

    report = commands.add_parser("report", help="Recompute the report from the logs")
    report.add_argument("--run-id", type=int, help="Restrict the report to one run")

    ingest = commands.add_parser("ingest", help="Poll the data source into raw_data.csv")
    ingest.add_argument("--count", type=int, default=1, help="Number of polls (default: 1)")
    ingest.add_argument("--payload-dir", help="Replay recorded payloads instead of calling the source")
    ingest.add_argument("--refresh-sample", action="store_true", help="Rewrite sample_data.csv from raw_data.csv")

    monitor = commands.add_parser("monitor", help="Sample resources and publish the summary")
    monitor.add_argument("--samples", type=int, default=1, help="Number of samples (default: 1)")
    return parser


def build_clock(args):
    if args.test_clock:
        return TickingClock(parse_timestamp(args.test_clock))
    return SystemClock()


def build_probe(args):
    return TEST_PROBES[args.test_probe]() if args.test_probe else None


def cmd_pipeline(args, cfg, clock) -> int:
    pipeline = Pipeline(cfg, clock=clock, probe=build_probe(args))
    if args.command == "run":
        if not args.test_clock:
            pipeline.monitor.start()
        try:
            result = pipeline.run(STEPS, report_out=args.report_out)
        finally:
            pipeline.monitor.stop()
    else:
        result = pipeline.run([STEP_COMMANDS[args.command]], with_report=False)

    manifest = result.manifest
    print(json.dumps({"run_id": manifest.run_id, "steps": {k: v.value for k, v in manifest.steps.items()}}))
    if result.report_path:
        print(f"Report: {result.report_path}")
    if manifest.failure:
        print(f"Halted: {manifest.failure}", file=sys.stderr)
    return result.exit_code


def cmd_report(args, cfg, clock) -> int:
    paths = resolve_domain_paths(cfg)
    out = Path(args.report_out) if args.report_out else paths.summaries_dir / Paths.REPORT_FILE
    report = publish_report(cfg.logs_root, out, args.run_id)
    print(f"Report: {out} ({len(report['runs'])} runs)")
    print(json.dumps(report["counts"], indent=2))
    return EXIT_OK


def cmd_ingest(args, cfg, clock) -> int:
    paths = resolve_domain_paths(cfg)
    exit_code = EXIT_OK
    if args.count > 0:
        poller = build_source_poller(cfg, paths, clock, args.payload_dir)
        replaying = isinstance(poller.fetch, FixtureFetcher)
        for index in range(args.count):
            poller.poll_once()
            if index + 1 < args.count and not replaying:
                time.sleep(poller.interval_s)
        status = poller.status()
        print(json.dumps(status, indent=2))
        if status["failures"]:
            exit_code = EXIT_FAILED
    if args.refresh_sample:
        rows = refresh_sample(paths, cfg.sample_window_min)
        print(f"Sample refreshed: {rows} rows")
    return exit_code


def cmd_monitor(args, cfg, clock) -> int:
    paths = resolve_domain_paths(cfg)
    monitor = ResourceMonitor(
        probe=build_probe(args),
        clock=clock,
        interval_s=cfg.sampling_interval_s,
        windows=cfg.windows_min,
        summary_path=paths.resource_summary,
        model_id=cfg.backend.model_id,
    )
    summary = None
    for index in range(max(1, args.samples)):
        if index:
            if isinstance(clock, TickingClock):
                clock.advance(cfg.sampling_interval_s)
            else:
                time.sleep(cfg.sampling_interval_s)
        summary = monitor.publish()
    print(json.dumps(summary.to_dict(), indent=2))
    return EXIT_OK


COMMANDS = {
    "run": cmd_pipeline,
    "task-gen": cmd_pipeline,
    "code-gen": cmd_pipeline,
    "validate": cmd_pipeline,
    "execute": cmd_pipeline,
    "report": cmd_report,
    "ingest": cmd_ingest,
    "monitor": cmd_monitor,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    overrides = {}
    if args.data_type:
        overrides["data_type"] = args.data_type
    if args.fixture_dir:
        overrides["fixture_dir"] = args.fixture_dir
    try:
        cfg = load_config(args.config, overrides=overrides)
    except (ConfigError, InvariantViolation, MissingFile) as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    setup_logging(cfg.logs_root, args.log_level)
    clock = build_clock(args)
    try:
        return COMMANDS[args.command](args, cfg, clock)
    except LeiError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
