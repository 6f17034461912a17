"""
Shared domain types passed between pipeline steps.
Every type that lands on disk has to_dict/from_dict so artifacts round-trip.
"""

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

from clock import parse_timestamp


def _iso(value: Optional[datetime]) -> Optional[str]:
    return value.isoformat() if value is not None else None


def _parse_iso(value: Optional[str]) -> Optional[datetime]:
    return parse_timestamp(value) if value else None


class ScriptOrigin(str, Enum):
    GENERATED = "generated"
    REGENERATED = "regenerated"


class ValidationStatus(str, Enum):
    PASSED_INITIAL = "passed_initial"
    PASSED_AFTER_FIX = "passed_after_fix"
    FAILED = "failed"


class ExitStatus(str, Enum):
    SUCCESS = "success"
    NONZERO = "nonzero"
    TIMED_OUT = "timed_out"
    SPAWN_ERROR = "spawn_error"


class ExecutionStatus(str, Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"
    SKIPPED_RESOURCES = "SKIPPED_RESOURCES"


class Verdict(str, Enum):
    SUFFICIENT = "Sufficient"
    INSUFFICIENT = "Insufficient"


class StepStatus(str, Enum):
    OK = "ok"
    FAILED = "failed"
    SKIPPED = "skipped"


# Pipeline step identifiers in execution order
STEPS = ("s1", "s2", "s3", "s4")
STEP_NAMES = {"s1": "task_gen", "s2": "code_gen", "s3": "validate", "s4": "execute"}


@dataclass(frozen=True)
class TaskSpec:
    name: str
    description: str

    def to_dict(self) -> Dict:
        return {"name": self.name, "description": self.description}

    @classmethod
    def from_dict(cls, data: Dict) -> "TaskSpec":
        return cls(name=data["name"], description=data["description"])


@dataclass
class GeneratedScript:
    task_name: str
    source: str
    origin: ScriptOrigin = ScriptOrigin.GENERATED
    attempt: int = 0
    created_at: Optional[datetime] = None
    path: Optional[str] = None
    description: str = ""


@dataclass(frozen=True)
class GenerationFailure:
    task_name: str
    reason: str
    batch_index: Optional[int] = None

    def to_dict(self) -> Dict:
        return {"task_name": self.task_name, "reason": self.reason, "batch_index": self.batch_index}


@dataclass
class SandboxResult:
    exit_status: ExitStatus
    exit_code: Optional[int] = None
    failure_reason: Optional[str] = None
    stdout: str = ""
    stderr: str = ""
    duration_s: float = 0.0
    parsed_output: Any = None
    has_output: bool = False
    pid: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.exit_status == ExitStatus.SUCCESS

    def error_text(self, tail: int = 4000) -> str:
        """Short description of the failure, ending with the stderr tail."""
        if self.ok:
            return ""
        head = self.failure_reason or self.exit_status.value
        detail = self.stderr[-tail:] if self.stderr else ""
        return f"{head}\n{detail}".strip()


@dataclass
class ValidationRecord:
    task_name: str
    status: ValidationStatus
    attempts_used: int = 0
    last_error: Optional[str] = None
    exec_durations_s: List[float] = field(default_factory=list)
    llm_fix_durations_s: List[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status != ValidationStatus.FAILED

    def to_dict(self) -> Dict:
        return {
            "task_name": self.task_name,
            "status": self.status.value,
            "attempts_used": self.attempts_used,
            "last_error": self.last_error,
            "durations_s": {
                "exec": list(self.exec_durations_s),
                "llm_fix": list(self.llm_fix_durations_s),
            },
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ValidationRecord":
        durations = data.get("durations_s") or {}
        return cls(
            task_name=data["task_name"],
            status=ValidationStatus(data["status"]),
            attempts_used=int(data["attempts_used"]),
            last_error=data.get("last_error"),
            exec_durations_s=list(durations.get("exec", [])),
            llm_fix_durations_s=list(durations.get("llm_fix", [])),
        )


@dataclass(frozen=True)
class ResourceSample:
    timestamp: datetime
    cpu_pct: float
    mem_used_pct: float
    mem_available_mb: float


@dataclass
class ResourceSummary:
    timestamp: datetime
    cpu_cores: int
    mem_available_mb: float
    cpu_avg_pct: Dict[str, float]
    mem_avg_pct: Dict[str, float]
    stale_windows: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "timestamp": _iso(self.timestamp),
            "cpu_cores": self.cpu_cores,
            "mem_available_mb": self.mem_available_mb,
            "cpu_avg_pct": dict(self.cpu_avg_pct),
            "mem_avg_pct": dict(self.mem_avg_pct),
            "stale_windows": list(self.stale_windows),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ResourceSummary":
        return cls(
            timestamp=parse_timestamp(data["timestamp"]),
            cpu_cores=int(data["cpu_cores"]),
            mem_available_mb=data["mem_available_mb"],
            cpu_avg_pct=dict(data["cpu_avg_pct"]),
            mem_avg_pct=dict(data["mem_avg_pct"]),
            stale_windows=list(data.get("stale_windows", [])),
        )


@dataclass(frozen=True)
class RunAggregate:
    model_id: str
    step: str
    run_id: int
    prop: str
    sample_count: int
    mean: float

    @property
    def key(self):
        return (self.model_id, self.step, self.prop)

    def to_dict(self) -> Dict:
        return {
            "model_id": self.model_id,
            "step": self.step,
            "run_id": self.run_id,
            "property": self.prop,
            "sample_count": self.sample_count,
            "mean": self.mean,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "RunAggregate":
        return cls(
            model_id=data["model_id"],
            step=data["step"],
            run_id=int(data["run_id"]),
            prop=data["property"],
            sample_count=int(data["sample_count"]),
            mean=float(data["mean"]),
        )


@dataclass(frozen=True)
class HeadroomDecision:
    verdict: Verdict
    cpu_avg_pct_1m: Optional[float]
    mem_available_mb: Optional[float]
    cpu_max_pct: float
    mem_min_available_mb: float
    stale: bool = False

    @property
    def sufficient(self) -> bool:
        return self.verdict == Verdict.SUFFICIENT

    def to_dict(self) -> Dict:
        return {
            "verdict": self.verdict.value,
            "cpu_avg_pct_1m": self.cpu_avg_pct_1m,
            "mem_available_mb": self.mem_available_mb,
            "thresholds": {
                "cpu_max_pct": self.cpu_max_pct,
                "mem_min_available_mb": self.mem_min_available_mb,
            },
            "stale": self.stale,
        }


@dataclass
class ExecutionRecord:
    run_id: int
    task_name: str
    start_time: datetime
    duration_ms: int
    status: ExecutionStatus
    output: Any = None
    failure_reason: Optional[str] = None

    def to_dict(self) -> Dict:
        return {
            "run_id": self.run_id,
            "task_name": self.task_name,
            "start_time": _iso(self.start_time),
            "duration_ms": self.duration_ms,
            "status": self.status.value,
            "output": self.output,
            "failure_reason": self.failure_reason,
        }


@dataclass(frozen=True)
class StepTiming:
    step: str
    start: datetime
    end: datetime

    @property
    def duration_s(self) -> float:
        return (self.end - self.start).total_seconds()

    def to_dict(self) -> Dict:
        return {
            "step": self.step,
            "name": STEP_NAMES.get(self.step, self.step),
            "start": _iso(self.start),
            "end": _iso(self.end),
            "duration_s": self.duration_s,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "StepTiming":
        return cls(step=data["step"], start=parse_timestamp(data["start"]), end=parse_timestamp(data["end"]))


@dataclass
class RunManifest:
    run_id: int
    data_type: str
    model_id: str
    started_at: datetime
    steps: Dict[str, StepStatus] = field(default_factory=lambda: {s: StepStatus.SKIPPED for s in STEPS})
    failure: Optional[str] = None
    artifacts: Dict[str, str] = field(default_factory=dict)
    finished_at: Optional[datetime] = None
    # Funnel counters: tasks_proposed, scripts_generated, generation_failures, dropped_tasks
    counts: Dict[str, int] = field(default_factory=dict)

    @property
    def succeeded(self) -> bool:
        return all(status == StepStatus.OK for status in self.steps.values())

    def to_dict(self) -> Dict:
        return {
            "run_id": self.run_id,
            "data_type": self.data_type,
            "model_id": self.model_id,
            "started_at": _iso(self.started_at),
            "finished_at": _iso(self.finished_at),
            "steps": {step: status.value for step, status in self.steps.items()},
            "failure": self.failure,
            "artifacts": dict(self.artifacts),
            "counts": dict(self.counts),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "RunManifest":
        return cls(
            run_id=int(data["run_id"]),
            data_type=data["data_type"],
            model_id=data.get("model_id", ""),
            started_at=parse_timestamp(data["started_at"]),
            steps={step: StepStatus(status) for step, status in data["steps"].items()},
            failure=data.get("failure"),
            artifacts=dict(data.get("artifacts", {})),
            finished_at=_parse_iso(data.get("finished_at")),
            counts={key: int(value) for key, value in data.get("counts", {}).items()},
        )
