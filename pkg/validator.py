"""
Step 3: validation.
Runs every generated script against the sample data, asks the LLM for a fix
when it fails (bounded number of attempts), and admits passing scripts to the
intelligence repository.
"""

import hashlib
import logging
import shutil
import tempfile
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from artifacts import append_jsonl, atomic_write_text, read_json, write_json
from clock import SystemClock, parse_timestamp
from code_generator import persist_scripts, script_path
from errors import MalformedJson
from llm_client import LlmCall, LlmClient
from llm_parser import EmptyAfterNormalize, NoJsonFound, UnbalancedJson, extract_json, normalize_source
from models import GeneratedScript, ScriptOrigin, ValidationRecord, ValidationStatus
from sandbox import execute_locally
from task_generator import PromptTemplate, section

logger = logging.getLogger(__name__)

VALIDATION_FIX_TEMPLATE = "validation_fix"
VALIDATION_FIX_PLACEHOLDERS = ("task_name", "description", "source", "error")
VALIDATOR_SUMMARY_FILE = "validator_summary.json"
INDEX_FILE = "index.json"

# Characters of stderr handed back to the LLM
ERROR_TAIL_CHARS = 4000


def source_hash(source: str) -> str:
    return hashlib.sha256(source.encode("utf-8")).hexdigest()


def fix_instruction(template: PromptTemplate, script: GeneratedScript, source: str, error: str) -> str:
    return template.render(
        {
            "task_name": script.task_name,
            "description": script.description or script.task_name,
            "source": section("SOURCE", source),
            "error": section("ERROR", error),
        }
    )


def extract_fixed_source(response: str) -> str:
    """Pull the repaired source out of a fix response (JSON with "code", or bare code)."""
    try:
        payload = extract_json(response)
    except (NoJsonFound, UnbalancedJson):
        payload = None
    if isinstance(payload, list) and len(payload) == 1:
        payload = payload[0]
    if isinstance(payload, dict) and isinstance(payload.get("code"), str):
        return normalize_source(payload["code"])
    return normalize_source(response)


@dataclass
class ValidationSettings:
    sample_path: Path
    scripts_dir: Path
    max_fix_attempts: int = 2
    timeout_s: float = 120.0
    runtime_cmd: str = "{python} {script} {data}"
    extension: str = ".py"


def _run_candidate(source: str, script: GeneratedScript, settings: ValidationSettings, clock):
    """Execute a candidate fix from a scratch file."""
    scratch = tempfile.mkdtemp(prefix="lei_fix_")
    try:
        candidate = Path(scratch) / f"{script.task_name}{settings.extension}"
        candidate.write_text(source, encoding="utf-8")
        return execute_locally(candidate, settings.sample_path, settings.timeout_s, settings.runtime_cmd, clock)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def validate_script(
    script: GeneratedScript,
    settings: ValidationSettings,
    client: Optional[LlmClient],
    fix_template: Optional[PromptTemplate],
    run_id: Optional[int] = None,
    clock=None,
) -> Tuple[ValidationRecord, Optional[GeneratedScript]]:
    """
    Validate one script with at most max_fix_attempts LLM fixes and
    max_fix_attempts + 1 executions.

    Returns:
        (record, the script that passed or None)
    """
    clock = clock or SystemClock()
    record = ValidationRecord(task_name=script.task_name, status=ValidationStatus.FAILED)

    script_file = script.path or script_path(settings.scripts_dir, script.task_name, settings.extension)
    result = execute_locally(script_file, settings.sample_path, settings.timeout_s, settings.runtime_cmd, clock)
    record.exec_durations_s.append(result.duration_s)
    if result.ok:
        record.status = ValidationStatus.PASSED_INITIAL
        return record, script

    record.last_error = result.error_text(ERROR_TAIL_CHARS)
    current_source = script.source
    for attempt in range(1, settings.max_fix_attempts + 1):
        record.attempts_used = attempt
        instruction = fix_instruction(fix_template, script, current_source, record.last_error)
        exchange = client.complete(
            instruction, LlmCall(run_id=run_id, step="fix", key=script.task_name, attempt=attempt)
        )
        record.llm_fix_durations_s.append(exchange.wall_duration_s)
        if not exchange.ok:
            record.last_error = exchange.failure_reason
            continue

        try:
            candidate_source = extract_fixed_source(exchange.response)
        except EmptyAfterNormalize:
            record.last_error = "empty fix"
            continue

        result = _run_candidate(candidate_source, script, settings, clock)
        record.exec_durations_s.append(result.duration_s)
        if result.ok:
            fixed = GeneratedScript(
                task_name=script.task_name,
                source=candidate_source,
                origin=ScriptOrigin.REGENERATED,
                attempt=attempt,
                created_at=clock.now(),
                description=script.description,
            )
            persist_scripts([fixed], settings.scripts_dir, settings.extension)
            record.status = ValidationStatus.PASSED_AFTER_FIX
            return record, fixed

        record.last_error = result.error_text(ERROR_TAIL_CHARS)
        current_source = candidate_source

    record.attempts_used = settings.max_fix_attempts
    return record, None


def validate_all(
    scripts: Sequence[GeneratedScript],
    settings: ValidationSettings,
    client: Optional[LlmClient],
    fix_template: Optional[PromptTemplate],
    run_id: Optional[int] = None,
    clock=None,
    history_log=None,
) -> Tuple[List[GeneratedScript], List[ValidationRecord]]:
    """Validate scripts one at a time; records come back in input order."""
    clock = clock or SystemClock()
    validated, records = [], []
    for script in scripts:
        record, passed = validate_script(script, settings, client, fix_template, run_id, clock)
        records.append(record)
        if passed is not None:
            validated.append(passed)
        logger.info(f"Validated {script.task_name}: {record.status.value} (fix attempts {record.attempts_used})")
        if history_log:
            append_jsonl(history_log, {"timestamp": clock.now().isoformat(), "run_id": run_id, **record.to_dict()})
    return validated, records


def write_validator_summary(records: Sequence[ValidationRecord], path) -> Path:
    return write_json(path, [record.to_dict() for record in records])


def read_validator_summary(path) -> List[ValidationRecord]:
    data = read_json(path)
    if not isinstance(data, list):
        raise MalformedJson(f"{path}: expected a JSON array")
    try:
        return [ValidationRecord.from_dict(item) for item in data]
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedJson(f"{path}: invalid record ({e})") from e


@dataclass(frozen=True)
class RepositoryEntry:
    task_name: str
    path: Path
    validated_at: datetime
    sha256: str


class IntelligenceRepository:
    """Validated scripts plus index.json mapping task_name to {path, validated_at, sha256}."""

    def __init__(self, directory, extension: str = ".py"):
        self.logger = logging.getLogger(__name__)
        self.directory = Path(directory)
        self.extension = extension
        self.index_path = self.directory / INDEX_FILE
        self.index: Dict[str, Dict[str, str]] = self._load()

    def _load(self) -> Dict[str, Dict[str, str]]:
        if not self.index_path.is_file():
            return {}
        data = read_json(self.index_path)
        if not isinstance(data, dict):
            raise MalformedJson(f"{self.index_path}: expected a JSON object")
        return data

    def save(self) -> Path:
        return write_json(self.index_path, self.index)

    def admit(self, scripts: Sequence[GeneratedScript], clock=None) -> List[str]:
        """Add or replace one entry per script; identical content leaves the entry as is."""
        clock = clock or SystemClock()
        changed = []
        for script in scripts:
            digest = source_hash(script.source)
            target = self.directory / f"{script.task_name}{self.extension}"
            entry = self.index.get(script.task_name)
            if entry and entry.get("sha256") == digest and target.is_file():
                continue
            atomic_write_text(target, script.source)
            self.index[script.task_name] = {
                "path": target.name,
                "validated_at": clock.now().isoformat(),
                "sha256": digest,
            }
            changed.append(script.task_name)
        if changed:
            self.save()
            self.logger.info(f"Repository admitted {len(changed)} scripts: {', '.join(changed)}")
        return changed

    def evict(self, task_names: Sequence[str]) -> List[str]:
        """Drop entries for scripts that no longer pass validation."""
        removed = [name for name in task_names if name in self.index]
        for name in removed:
            entry = self.index.pop(name)
            (self.directory / entry["path"]).unlink(missing_ok=True)
        if removed:
            self.save()
            self.logger.info(f"Repository evicted {len(removed)} scripts: {', '.join(removed)}")
        return removed

    def entries(self) -> List[RepositoryEntry]:
        """Entries in index order."""
        return [
            RepositoryEntry(
                task_name=name,
                path=self.directory / entry["path"],
                validated_at=parse_timestamp(entry["validated_at"]),
                sha256=entry["sha256"],
            )
            for name, entry in self.index.items()
        ]

    def verify(self) -> List[str]:
        """Return a problem description for every entry whose file is missing or altered."""
        problems = []
        for entry in self.entries():
            if not entry.path.is_file():
                problems.append(f"{entry.task_name}: file missing")
            elif source_hash(entry.path.read_text(encoding="utf-8")) != entry.sha256:
                problems.append(f"{entry.task_name}: hash mismatch")
        return problems

    def __len__(self) -> int:
        return len(self.index)


def admit(validated: Sequence[GeneratedScript], repo: IntelligenceRepository, clock=None) -> IntelligenceRepository:
    repo.admit(validated, clock)
    return repo


@dataclass
class ValidationOutcome:
    validated: List[GeneratedScript] = field(default_factory=list)
    records: List[ValidationRecord] = field(default_factory=list)
    summary_path: Optional[Path] = None


def run_validation(
    scripts: Sequence[GeneratedScript],
    settings: ValidationSettings,
    client: Optional[LlmClient],
    fix_template: Optional[PromptTemplate],
    repository: IntelligenceRepository,
    summary_path,
    run_id: Optional[int] = None,
    clock=None,
    history_log=None,
) -> ValidationOutcome:
    """Full step: validate, write the summary, admit passing scripts, evict failing ones."""
    validated, records = validate_all(scripts, settings, client, fix_template, run_id, clock, history_log)
    path = write_validator_summary(records, summary_path)
    admit(validated, repository, clock)
    repository.evict([r.task_name for r in records if not r.passed])
    return ValidationOutcome(validated, records, path)
