"""
Pipeline metrics and the machine-readable report.

Every number in the report is recomputed from the audit trail under
logs_root: exchange log, step timings, step resource aggregates, validation
history, code generation failures, execution logs and run manifests.
"""

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from artifacts import read_json, read_jsonl, write_json
from clock import parse_timestamp
from config import Paths
from errors import (
    EmptyRecords,
    EmptyRuns,
    InvariantViolation,
    IoError,
    LeiError,
    MissingFile,
    NoEligibleRuns,
    NoExecutions,
)
from llm_client import OK, LlmUsage
from models import STEPS, ExecutionRecord, ExecutionStatus, RunAggregate, RunManifest, StepTiming, ValidationRecord
from resource_monitor import group_utilization

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LLM_STEPS = ("task_gen", "code_gen", "fix")

FUNNEL = (
    "tasks_proposed",
    "scripts_generated",
    "reached_validator",
    "passed",
    "reached_step4",
    "executed_ok",
)

LOG_LINE = re.compile(
    r"^(?P<start>\S+) \| run=(?P<run>\d+) \| task=(?P<task>[^\s|]+) "
    r"\| duration_ms=(?P<ms>\d+) \| status=(?P<status>[A-Z_]+)$"
)
EXECUTION_LOG_GLOB = "edge_execution_*.log"

TOKEN_RATE_COLUMNS = (
    "run_id",
    "step",
    "key",
    "attempt",
    "model_id",
    "prompt_tokens",
    "completion_tokens",
    "prompt_tps",
    "completion_tps",
)


@dataclass
class LatencyResult:
    total_s: float
    durations_s: Dict[str, Optional[float]]
    absent: List[str]

    def to_dict(self) -> Dict:
        return {"end_to_end_latency_s": self.total_s, "step_durations_s": dict(self.durations_s), "absent_steps": list(self.absent)}


def end_to_end_latency(timings: Sequence[StepTiming]) -> LatencyResult:
    """Sum of the durations of the steps that ran; the others are listed as absent."""
    durations: Dict[str, Optional[float]] = {step: None for step in STEPS}
    for timing in timings:
        durations[timing.step] = (durations.get(timing.step) or 0.0) + timing.duration_s
    absent = [step for step in STEPS if durations[step] is None]
    total = sum(value for value in durations.values() if value is not None)
    return LatencyResult(total, durations, absent)


def _rate(tokens: int, duration_ns: int, label: str) -> Optional[float]:
    if duration_ns <= 0:
        logger.warning(f"Zero {label} duration; rate not reported")
        return None
    return tokens / (duration_ns / 1e9)


def prompt_tps(usage: LlmUsage) -> Optional[float]:
    """Prompt tokens per second of prompt evaluation."""
    return _rate(usage.prompt_tokens, usage.prompt_eval_duration_ns, "prompt_eval")


def completion_tps(usage: LlmUsage) -> Optional[float]:
    """Generated tokens per second of generation."""
    return _rate(usage.completion_tokens, usage.eval_duration_ns, "eval")


def reliability(records: Sequence[ValidationRecord]) -> float:
    """Share of validated scripts that passed, initially or after a fix."""
    if not records:
        raise EmptyRecords("No validation records")
    return sum(1 for r in records if r.passed) / len(records)


@dataclass
class ValidationRate:
    value: float
    eligible_runs: int
    excluded_runs: int

    def to_dict(self) -> Dict:
        return {"value": self.value, "eligible_runs": self.eligible_runs, "excluded_runs": self.excluded_runs}


def validation_success_rate(per_run: Dict[int, Sequence[ValidationRecord]]) -> ValidationRate:
    """Unweighted mean of per-run pass ratios; runs with nothing submitted are excluded."""
    rates = []
    excluded = 0
    for run_id in sorted(per_run):
        records = per_run[run_id]
        if not records:
            excluded += 1
            continue
        rates.append(sum(1 for r in records if r.passed) / len(records))
    if not rates:
        raise NoEligibleRuns(f"No run submitted scripts to validation ({excluded} excluded)")
    return ValidationRate(sum(rates) / len(rates), len(rates), excluded)


@dataclass
class ExecutionRate:
    value: float
    success: int
    failure: int
    skipped: int

    def to_dict(self) -> Dict:
        return {"value": self.value, "success": self.success, "failure": self.failure, "skipped": self.skipped}


def execution_success_rate(records: Sequence[ExecutionRecord]) -> ExecutionRate:
    success = sum(1 for r in records if r.status == ExecutionStatus.SUCCESS)
    failure = sum(1 for r in records if r.status == ExecutionStatus.FAILURE)
    skipped = sum(1 for r in records if r.status == ExecutionStatus.SKIPPED_RESOURCES)
    if success + failure == 0:
        raise NoExecutions(f"No executed scripts ({skipped} skipped)")
    return ExecutionRate(success / (success + failure), success, failure, skipped)


@dataclass
class ExecutionLogParse:
    records: List[ExecutionRecord] = field(default_factory=list)
    malformed: List[Tuple[int, str]] = field(default_factory=list)


def parse_log_line(line: str) -> ExecutionRecord:
    match = LOG_LINE.match(line)
    if not match:
        raise ValueError("line does not match the execution log format")
    return ExecutionRecord(
        run_id=int(match["run"]),
        task_name=match["task"],
        start_time=parse_timestamp(match["start"]),
        duration_ms=int(match["ms"]),
        status=ExecutionStatus(match["status"]),
    )


def parse_execution_log(path) -> ExecutionLogParse:
    """Read an execution log back into records; malformed lines are collected."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    result = ExecutionLogParse()
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                result.records.append(parse_log_line(line))
            except ValueError:
                result.malformed.append((number, line))
    if result.malformed:
        logger.warning(f"{path.name}: {len(result.malformed)} malformed lines")
    return result


def load_manifests(logs_root) -> List[RunManifest]:
    runs_dir = Path(logs_root) / Paths.RUNS_DIR
    manifests = []
    for path in sorted(runs_dir.glob("run_*.json")):
        try:
            manifests.append(RunManifest.from_dict(read_json(path)))
        except (LeiError, KeyError, TypeError, ValueError) as e:
            logger.warning(f"Skipping unreadable run manifest {path.name}: {e}")
    return sorted(manifests, key=lambda m: m.run_id)


def load_execution_records(logs_root) -> Tuple[List[ExecutionRecord], int]:
    """All execution records under logs_root plus the number of malformed lines."""
    records, malformed = [], 0
    for path in sorted(Path(logs_root).glob(EXECUTION_LOG_GLOB)):
        parsed = parse_execution_log(path)
        records.extend(parsed.records)
        malformed += len(parsed.malformed)
    return records, malformed


def _in_scope(entries: Iterable[Dict], run_ids) -> List[Dict]:
    return [e for e in entries if e.get("run_id") in run_ids]


def _mean(values: Sequence[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def token_rate_rows(exchanges: Iterable[Dict]) -> List[Dict]:
    """One row per successful exchange that reported usage."""
    rows = []
    for entry in exchanges:
        if entry.get("outcome") != OK or not entry.get("usage"):
            continue
        usage = LlmUsage.from_dict(entry["usage"])
        rows.append(
            {
                "run_id": entry.get("run_id"),
                "step": entry.get("step"),
                "key": entry.get("key"),
                "attempt": entry.get("attempt", 0),
                "model_id": entry.get("model_id", ""),
                "prompt_tokens": usage.prompt_tokens,
                "completion_tokens": usage.completion_tokens,
                "prompt_eval_duration_ns": usage.prompt_eval_duration_ns,
                "eval_duration_ns": usage.eval_duration_ns,
                "prompt_tps": prompt_tps(usage),
                "completion_tps": completion_tps(usage),
            }
        )
    return rows


def _pooled(rows: Sequence[Dict], tokens: str, duration: str) -> Optional[float]:
    total_ns = sum(row[duration] for row in rows)
    if total_ns <= 0:
        return None
    return sum(row[tokens] for row in rows) / (total_ns / 1e9)


def throughput_by_step(rows: Sequence[Dict]) -> Dict[str, Dict]:
    """Per LLM step: mean of per-call rates and total tokens over total time."""
    result = {}
    for step in LLM_STEPS:
        step_rows = [row for row in rows if row["step"] == step]
        if not step_rows:
            continue
        result[step] = {
            "calls": len(step_rows),
            "prompt_tps": {
                "mean_of_rates": _mean([r["prompt_tps"] for r in step_rows if r["prompt_tps"] is not None]),
                "pooled_rate": _pooled(step_rows, "prompt_tokens", "prompt_eval_duration_ns"),
            },
            "completion_tps": {
                "mean_of_rates": _mean([r["completion_tps"] for r in step_rows if r["completion_tps"] is not None]),
                "pooled_rate": _pooled(step_rows, "completion_tokens", "eval_duration_ns"),
            },
        }
    return result


def _utilization(aggregates: Sequence[RunAggregate]) -> List[Dict]:
    try:
        grouped = group_utilization(aggregates)
    except EmptyRuns:
        return []
    return [
        {
            "model_id": model_id,
            "step": step,
            "property": prop,
            "value": value,
            "runs": sum(1 for a in aggregates if a.key == (model_id, step, prop)),
        }
        for (model_id, step, prop), value in sorted(grouped.items())
    ]


def _funnel_counts(
    manifests: Sequence[RunManifest],
    validation: Dict[int, List[ValidationRecord]],
    executions: Sequence[ExecutionRecord],
    ledger_failures: int,
) -> Dict[str, int]:
    passed_pairs = {(run_id, r.task_name) for run_id, records in validation.items() for r in records if r.passed}
    executed = {(r.run_id, r.task_name): r.status for r in executions if r.status != ExecutionStatus.SKIPPED_RESOURCES}
    reached = [pair for pair in passed_pairs if pair in executed]

    all_records = [r for records in validation.values() for r in records]
    counts = {
        "tasks_proposed": sum(m.counts.get("tasks_proposed", 0) for m in manifests),
        "scripts_generated": sum(m.counts.get("scripts_generated", 0) for m in manifests),
        "reached_validator": len(all_records),
        "passed": sum(1 for r in all_records if r.passed),
        "failed": sum(1 for r in all_records if not r.passed),
        "reached_step4": len(reached),
        "executed_ok": sum(1 for pair in reached if executed[pair] == ExecutionStatus.SUCCESS),
        "generation_failures": sum(m.counts.get("generation_failures", 0) for m in manifests),
        "codegen_ledger_failures": ledger_failures,
        "dropped_tasks": sum(m.counts.get("dropped_tasks", 0) for m in manifests),
        "skipped_executions": sum(1 for r in executions if r.status == ExecutionStatus.SKIPPED_RESOURCES),
    }
    if counts["generation_failures"] != ledger_failures:
        logger.warning(
            f"Generation failures in manifests ({counts['generation_failures']}) "
            f"differ from the code generation ledger ({ledger_failures})"
        )
    return counts


def build_report(logs_root, run_id: Optional[int] = None) -> Dict:
    """
    Compute the report for every run recorded under logs_root, or for one run.

    The result is a pure function of the log files.
    """
    logs_root = Path(logs_root)
    manifests = load_manifests(logs_root)
    if run_id is not None:
        manifests = [m for m in manifests if m.run_id == run_id]
    run_ids = {m.run_id for m in manifests}

    timings: Dict[int, List[StepTiming]] = {rid: [] for rid in run_ids}
    for entry in _in_scope(read_jsonl(logs_root / Paths.STEP_TIMINGS_LOG), run_ids):
        timings[entry["run_id"]].append(StepTiming.from_dict(entry))

    validation: Dict[int, List[ValidationRecord]] = {rid: [] for rid in run_ids}
    for entry in _in_scope(read_jsonl(logs_root / Paths.VALIDATION_HISTORY_LOG), run_ids):
        validation[entry["run_id"]].append(ValidationRecord.from_dict(entry))

    all_executions, malformed = load_execution_records(logs_root)
    executions = [r for r in all_executions if r.run_id in run_ids]

    aggregates = [
        RunAggregate.from_dict(entry)
        for entry in _in_scope(read_jsonl(logs_root / Paths.STEP_RESOURCES_LOG), run_ids)
    ]
    rows = token_rate_rows(_in_scope(read_jsonl(logs_root / Paths.EXCHANGE_LOG), run_ids))
    ledger_failures = len(_in_scope(read_jsonl(logs_root / Paths.CODEGEN_FAILURE_LOG), run_ids))

    runs = []
    for manifest in manifests:
        latency = end_to_end_latency(timings[manifest.run_id])
        runs.append(
            {
                "run_id": manifest.run_id,
                "data_type": manifest.data_type,
                "model_id": manifest.model_id,
                "steps": {step: status.value for step, status in manifest.steps.items()},
                "step_timings": [t.to_dict() for t in sorted(timings[manifest.run_id], key=lambda t: t.step)],
                "failure": manifest.failure,
                **latency.to_dict(),
            }
        )

    step_latency = {}
    for step in STEPS:
        values = [run["step_durations_s"][step] for run in runs if run["step_durations_s"][step] is not None]
        step_latency[step] = _mean(values)

    all_validation = [r for records in validation.values() for r in records]
    try:
        reliability_value = reliability(all_validation)
    except EmptyRecords:
        reliability_value = None
    try:
        validation_rate = validation_success_rate(validation).to_dict()
    except NoEligibleRuns:
        validation_rate = {"value": None, "eligible_runs": 0, "excluded_runs": len(validation)}
    try:
        execution_rate = execution_success_rate(executions).to_dict()
    except NoExecutions:
        skipped = sum(1 for r in executions if r.status == ExecutionStatus.SKIPPED_RESOURCES)
        execution_rate = {"value": None, "success": 0, "failure": 0, "skipped": skipped}

    return {
        "schema_version": SCHEMA_VERSION,
        "run_id": run_id,
        "run_ids": sorted(run_ids),
        "model_ids": sorted({m.model_id for m in manifests}),
        "runs": runs,
        "end_to_end_latency_s": _mean([run["end_to_end_latency_s"] for run in runs]),
        "step_latency_s": step_latency,
        "throughput": {"per_call": rows, "per_step": throughput_by_step(rows)},
        "reliability": reliability_value,
        "validation_success_rate": validation_rate,
        "execution_success_rate": execution_rate,
        "resource_utilization": _utilization(aggregates),
        "counts": _funnel_counts(manifests, validation, executions, ledger_failures),
        "malformed_log_lines": malformed,
    }


def _check_rate(name: str, value) -> None:
    if value is None:
        return
    if not isinstance(value, (int, float)) or math.isnan(value) or not 0.0 <= value <= 1.0:
        raise InvariantViolation(name, f"Rate '{name}' out of [0, 1]: {value}")


def check_report(report: Dict) -> None:
    """
    Raises:
        InvariantViolation: a rate is outside [0, 1], the funnel is not
            monotone, or a run's latency differs from its step durations
    """
    _check_rate("reliability", report.get("reliability"))
    _check_rate("validation_success_rate", (report.get("validation_success_rate") or {}).get("value"))
    _check_rate("execution_success_rate", (report.get("execution_success_rate") or {}).get("value"))

    counts = report.get("counts", {})
    funnel = [counts.get(name, 0) for name in FUNNEL]
    for (upper_name, upper), (lower_name, lower) in zip(zip(FUNNEL, funnel), zip(FUNNEL[1:], funnel[1:])):
        if lower > upper:
            raise InvariantViolation("counts", f"Funnel not monotone: {lower_name}={lower} > {upper_name}={upper}")
    if counts.get("failed", 0) > counts.get("reached_validator", 0):
        raise InvariantViolation("counts", "failed exceeds reached_validator")

    for run in report.get("runs", []):
        present = sum(v for v in run.get("step_durations_s", {}).values() if v is not None)
        if abs(present - run.get("end_to_end_latency_s", 0.0)) > 1e-3:
            raise InvariantViolation("end_to_end_latency_s", f"Run {run.get('run_id')}: latency differs from its steps")


def emit_report(report: Dict, path) -> Path:
    """Check the report and write it as one JSON document."""
    check_report(report)
    return write_json(path, report)


def read_report(path) -> Dict:
    return read_json(path)


def export_token_rates(rows: Sequence[Dict], path) -> Path:
    """Write per-call token rates as CSV; absent rates are empty cells."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=TOKEN_RATE_COLUMNS, extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow({key: ("" if row.get(key) is None else row.get(key)) for key in TOKEN_RATE_COLUMNS})
    except OSError as e:
        raise IoError(f"Failed to write {path}: {e}") from e
    return path


def publish_report(logs_root, report_path, run_id: Optional[int] = None) -> Dict:
    """Build, check and write report.json plus token_rates.csv beside it."""
    report = build_report(logs_root, run_id)
    report_path = Path(report_path)
    emit_report(report, report_path)
    export_token_rates(report["throughput"]["per_call"], report_path.parent / Paths.TOKEN_RATES_FILE)
    logger.info(f"Report written to {report_path} ({len(report['runs'])} runs)")
    return report
