"""
Step 2: code generation.
Splits new tasks into batches of k, asks the LLM for one script per task,
normalizes the returned source and writes the script files.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from artifacts import append_jsonl, atomic_write_text
from clock import SystemClock
from errors import BatchFailed, InvariantViolation
from ingestion import DomainBundle
from llm_client import LlmCall, LlmClient
from llm_parser import EmptyAfterNormalize, NoJsonFound, UnbalancedJson, extract_json, normalize_source
from models import GeneratedScript, GenerationFailure, ScriptOrigin, TaskSpec
from task_generator import PromptTemplate, normalize_task_name, render_tasks, section

logger = logging.getLogger(__name__)

CODE_GENERATION_TEMPLATE = "code_generation"
CODE_GENERATION_PLACEHOLDERS = ("tasks", "sample_data", "metadata", "context")


def partition_batches(tasks: Sequence[TaskSpec], k: int) -> List[List[TaskSpec]]:
    """Split tasks into ceil(n/k) consecutive batches of at most k."""
    if k < 1:
        raise InvariantViolation("batch_size_k", "batch_size_k must be >= 1")
    tasks = list(tasks)
    return [tasks[i * k : (i + 1) * k] for i in range(math.ceil(len(tasks) / k))]


@dataclass
class BatchResult:
    scripts: List[GeneratedScript] = field(default_factory=list)
    failures: List[GenerationFailure] = field(default_factory=list)


def code_instruction(batch: Sequence[TaskSpec], bundle: DomainBundle, template: PromptTemplate) -> str:
    return template.render(
        {
            "tasks": section("TASKS", render_tasks(batch)),
            "sample_data": section("SAMPLE_DATA", bundle.sample_data),
            "metadata": section("METADATA", bundle.metadata_text),
            "context": section("CONTEXT", bundle.context),
        }
    )


def _script_items(payload) -> List[Dict]:
    if isinstance(payload, dict):
        for key in ("scripts", "tasks", "code"):
            if isinstance(payload.get(key), list):
                return payload[key]
        if "code" in payload:
            return [payload]
    if isinstance(payload, list):
        return payload
    raise BatchFailed("response JSON is not an array of scripts")


def generate_code_batch(
    client: LlmClient,
    batch: Sequence[TaskSpec],
    bundle: DomainBundle,
    template: PromptTemplate,
    batch_index: int = 0,
    run_id: Optional[int] = None,
    clock=None,
) -> BatchResult:
    """
    Request scripts for one batch. Scripts are matched to tasks by name;
    tasks absent from the response become generation failures.

    Raises:
        BatchFailed: the call failed or no JSON could be extracted
    """
    if not batch:
        raise ValueError("Batch must not be empty")
    clock = clock or SystemClock()

    exchange = client.complete(
        code_instruction(batch, bundle, template),
        LlmCall(run_id=run_id, step="code_gen", key=str(batch_index)),
    )
    if not exchange.ok:
        raise BatchFailed(exchange.failure_reason)
    try:
        payload = extract_json(exchange.response)
    except (NoJsonFound, UnbalancedJson) as e:
        raise BatchFailed(f"no JSON in response ({e})")

    by_name: Dict[str, Dict] = {}
    for item in _script_items(payload):
        if not isinstance(item, dict):
            continue
        name = item.get("name") or item.get("task_name")
        if isinstance(name, str) and name.strip():
            by_name.setdefault(normalize_task_name(name), item)

    result = BatchResult()
    wanted = {task.name for task in batch}
    for task in batch:
        item = by_name.get(task.name)
        if item is None:
            result.failures.append(GenerationFailure(task.name, "missing from response", batch_index))
            continue
        code = item.get("code")
        if not isinstance(code, str):
            result.failures.append(GenerationFailure(task.name, "no code string", batch_index))
            continue
        try:
            source = normalize_source(code)
        except EmptyAfterNormalize:
            result.failures.append(GenerationFailure(task.name, "empty code", batch_index))
            continue
        result.scripts.append(
            GeneratedScript(
                task_name=task.name,
                source=source,
                origin=ScriptOrigin.GENERATED,
                created_at=clock.now(),
                description=task.description,
            )
        )

    extra = sorted(set(by_name) - wanted)
    if extra:
        logger.debug(f"Ignoring scripts for tasks outside batch {batch_index}: {extra}")
    return result


def script_path(directory, task_name: str, extension: str) -> Path:
    return Path(directory) / f"{task_name}{extension}"


def persist_scripts(
    scripts: Sequence[GeneratedScript],
    directory,
    extension: str = ".py",
) -> Tuple[List[Path], List[GenerationFailure]]:
    """
    Write one file per script. An existing file is only replaced by a
    regenerated script; identical content is left untouched.

    Returns:
        (written or unchanged paths, conflicts with differing existing files)
    """
    directory = Path(directory)
    paths, conflicts = [], []
    for script in scripts:
        path = script_path(directory, script.task_name, extension)
        if path.exists():
            current = path.read_text(encoding="utf-8")
            if current == script.source:
                script.path = str(path)
                paths.append(path)
                continue
            if script.origin != ScriptOrigin.REGENERATED:
                logger.warning(f"Not overwriting {path}: existing script differs")
                conflicts.append(GenerationFailure(script.task_name, "existing script differs"))
                continue
        atomic_write_text(path, script.source)
        script.path = str(path)
        paths.append(path)
    return paths, conflicts


@dataclass
class CodeGenerationOutcome:
    scripts: List[GeneratedScript] = field(default_factory=list)
    failures: List[GenerationFailure] = field(default_factory=list)
    batches: int = 0
    batches_failed: int = 0

    @property
    def all_batches_failed(self) -> bool:
        return self.batches > 0 and self.batches_failed == self.batches


def run_code_generation(
    tasks: Sequence[TaskSpec],
    bundle: DomainBundle,
    template: PromptTemplate,
    client: LlmClient,
    scripts_dir,
    batch_size_k: int,
    extension: str = ".py",
    run_id: Optional[int] = None,
    clock=None,
    failure_ledger=None,
) -> CodeGenerationOutcome:
    """Full step: batches processed one at a time; a failed batch fails only its own tasks."""
    clock = clock or SystemClock()
    outcome = CodeGenerationOutcome()
    batches = partition_batches(tasks, batch_size_k)
    outcome.batches = len(batches)

    for index, batch in enumerate(batches):
        try:
            result = generate_code_batch(client, batch, bundle, template, index, run_id, clock)
        except BatchFailed as e:
            logger.error(f"Code generation batch {index} failed: {e}")
            outcome.batches_failed += 1
            result = BatchResult(failures=[GenerationFailure(t.name, str(e), index) for t in batch])

        _, conflicts = persist_scripts(result.scripts, scripts_dir, extension)
        conflicted = {c.task_name for c in conflicts}
        outcome.scripts.extend(s for s in result.scripts if s.task_name not in conflicted)
        outcome.failures.extend(result.failures + conflicts)

    if failure_ledger:
        for failure in outcome.failures:
            append_jsonl(
                failure_ledger,
                {"timestamp": clock.now().isoformat(), "run_id": run_id, **failure.to_dict()},
            )
    logger.info(
        f"Code generation: {len(outcome.scripts)} scripts, {len(outcome.failures)} failures "
        f"over {outcome.batches} batches"
    )
    return outcome
