"""
Step 4: execution.
Runs repository scripts one at a time against the raw data, checking
resource headroom before each one, and appends the execution log.
"""

import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from artifacts import write_json
from clock import SystemClock
from errors import IoError, LeiError
from models import ExecutionRecord, ExecutionStatus, HeadroomDecision, ResourceSummary, Verdict
from sandbox import execute_locally

logger = logging.getLogger(__name__)

LOG_NAME_FORMAT = "edge_execution_{date}.log"
FAILURE_TAIL_CHARS = 2000


@dataclass(frozen=True)
class Thresholds:
    cpu_max_pct: float = 80.0
    mem_min_available_mb: float = 256.0
    # Summaries older than this are treated as missing
    max_age_s: Optional[float] = None


def headroom_window(summary: ResourceSummary) -> Optional[str]:
    """The 1-minute window, or the shortest one published."""
    if "1m" in summary.cpu_avg_pct:
        return "1m"
    if not summary.cpu_avg_pct:
        return None
    return min(summary.cpu_avg_pct, key=lambda key: float(key.rstrip("m")))


def check_resource(summary: Optional[ResourceSummary], thresholds: Thresholds, now: Optional[datetime] = None) -> HeadroomDecision:
    """Sufficient iff cpu[1m] <= cpu_max_pct and mem_available >= mem_min_available_mb on a fresh summary."""
    if summary is None:
        return HeadroomDecision(Verdict.INSUFFICIENT, None, None, thresholds.cpu_max_pct, thresholds.mem_min_available_mb, stale=True)

    window = headroom_window(summary)
    cpu = summary.cpu_avg_pct.get(window) if window else None
    mem = summary.mem_available_mb

    stale = False
    if thresholds.max_age_s is not None and now is not None:
        stale = (now - summary.timestamp).total_seconds() > thresholds.max_age_s

    sufficient = (
        not stale
        and cpu is not None
        and cpu <= thresholds.cpu_max_pct
        and mem >= thresholds.mem_min_available_mb
    )
    return HeadroomDecision(
        verdict=Verdict.SUFFICIENT if sufficient else Verdict.INSUFFICIENT,
        cpu_avg_pct_1m=cpu,
        mem_available_mb=mem,
        cpu_max_pct=thresholds.cpu_max_pct,
        mem_min_available_mb=thresholds.mem_min_available_mb,
        stale=stale,
    )


def log_path(logs_root, start_time: datetime) -> Path:
    date = start_time.astimezone(timezone.utc).strftime("%Y%m%d")
    return Path(logs_root) / LOG_NAME_FORMAT.format(date=date)


def format_log_line(record: ExecutionRecord) -> str:
    return (
        f"{record.start_time.isoformat()} | run={record.run_id} | task={record.task_name} "
        f"| duration_ms={int(record.duration_ms)} | status={record.status.value}"
    )


def append_log(record: ExecutionRecord, logs_root) -> Path:
    """Append one line to the execution log named after the record's start date."""
    path = log_path(logs_root, record.start_time)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as handle:
            handle.write(format_log_line(record) + "\n")
    except OSError as e:
        raise IoError(f"Failed to append to {path}: {e}") from e
    return path


def execute_validated(
    entries: Sequence,
    raw_data_path,
    runtime_cmd: str,
    timeout_s: float,
    summary_source: Callable[[], ResourceSummary],
    thresholds: Thresholds,
    run_id: int,
    logs_root,
    clock=None,
) -> List[ExecutionRecord]:
    """
    Execute repository entries in order. Headroom is checked before each
    script; an insufficient check skips that script and the loop goes on.
    """
    clock = clock or SystemClock()
    records = []
    for entry in entries:
        try:
            summary = summary_source()
        except LeiError as e:
            logger.warning(f"No resource summary before {entry.task_name}: {e}")
            summary = None
        decision = check_resource(summary, thresholds, clock.now())

        if not decision.sufficient:
            logger.info(f"Skipping {entry.task_name}: {decision.to_dict()}")
            record = ExecutionRecord(
                run_id=run_id,
                task_name=entry.task_name,
                start_time=clock.now(),
                duration_ms=0,
                status=ExecutionStatus.SKIPPED_RESOURCES,
                failure_reason="insufficient resources",
            )
        else:
            start = clock.now()
            result = execute_locally(entry.path, raw_data_path, timeout_s, runtime_cmd, clock)
            duration_ms = int(round(result.duration_s * 1000))
            if result.ok:
                record = ExecutionRecord(run_id, entry.task_name, start, duration_ms, ExecutionStatus.SUCCESS, result.parsed_output)
            else:
                record = ExecutionRecord(
                    run_id,
                    entry.task_name,
                    start,
                    duration_ms,
                    ExecutionStatus.FAILURE,
                    failure_reason=result.error_text(FAILURE_TAIL_CHARS),
                )
            logger.info(f"Executed {entry.task_name}: {record.status.value} in {duration_ms} ms")

        append_log(record, logs_root)
        records.append(record)
    return records


def publish_outputs(records: Sequence[ExecutionRecord], output_dir, run_id: int) -> Path:
    """Write results_{run_id}.json; only SUCCESS records carry output."""
    results = [
        {
            "task_name": record.task_name,
            "status": record.status.value,
            "output": record.output if record.status == ExecutionStatus.SUCCESS else None,
        }
        for record in records
    ]
    return write_json(Path(output_dir) / f"results_{run_id}.json", results)
