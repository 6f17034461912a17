"""
Step 1: task generation.
Builds the structured instruction from the domain bundle and the resource
summary, asks the LLM for analytic tasks, and merges them with the task
history.
"""

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from artifacts import write_json
from config import DomainPaths
from errors import MissingFile, StepFailed, UnresolvedPlaceholder
from ingestion import DomainBundle
from llm_client import LlmCall, LlmClient
from llm_parser import NoJsonFound, UnbalancedJson, extract_json
from models import ResourceSummary, TaskSpec

logger = logging.getLogger(__name__)

TASK_GENERATION_TEMPLATE = "task_generation"
TASK_GENERATION_PLACEHOLDERS = ("sample_data", "metadata", "context", "resource_summary", "previous_tasks")

TASK_NAME_MAX = 80
TASK_NAME_PATTERN = re.compile(r"^[a-z0-9_]{1,80}$")
NEW_TASKS_FILE = "new_tasks.json"


def section(label: str, content: str) -> str:
    """Wrap content in labeled begin/end markers."""
    return f"<<<{label}>>>\n{content.rstrip()}\n<<<END {label}>>>"


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str
    placeholders: Tuple[str, ...]

    @classmethod
    def load(cls, prompts_root, name: str, placeholders: Sequence[str]) -> "PromptTemplate":
        path = Path(prompts_root) / f"{name}.txt"
        if not path.is_file():
            raise MissingFile(path)
        template = cls(name=name, text=path.read_text(encoding="utf-8"), placeholders=tuple(placeholders))
        template.check()
        return template

    def check(self) -> None:
        """Every placeholder must appear exactly once."""
        for placeholder in self.placeholders:
            count = self.text.count("{" + placeholder + "}")
            if count != 1:
                raise UnresolvedPlaceholder(
                    placeholder,
                    f"Template '{self.name}' has {count} occurrences of {{{placeholder}}}, expected 1",
                )

    def render(self, values: Dict[str, str]) -> str:
        """Substitute all placeholders in one pass; substituted text is not rescanned."""
        self.check()
        for placeholder in self.placeholders:
            if placeholder not in values:
                raise UnresolvedPlaceholder(placeholder)
        pattern = re.compile(r"\{(" + "|".join(re.escape(p) for p in self.placeholders) + r")\}")
        return pattern.sub(lambda m: values[m.group(1)], self.text)


def render_tasks(tasks: Sequence[TaskSpec]) -> str:
    return json.dumps([t.to_dict() for t in tasks], indent=2, ensure_ascii=False)


def aggregate_instruction(
    bundle: DomainBundle,
    template: PromptTemplate,
    summary: ResourceSummary,
    previous_tasks: Optional[Sequence[TaskSpec]] = None,
) -> str:
    """Render the task-generation instruction; deterministic for equal inputs."""
    previous = bundle.previous_tasks if previous_tasks is None else previous_tasks
    return template.render(
        {
            "sample_data": section("SAMPLE_DATA", bundle.sample_data),
            "metadata": section("METADATA", bundle.metadata_text),
            "context": section("CONTEXT", bundle.context),
            "resource_summary": section(
                "RESOURCE_SUMMARY", json.dumps(summary.to_dict(), indent=2, ensure_ascii=False)
            ),
            "previous_tasks": section("PREVIOUS_TASKS", render_tasks(previous)),
        }
    )


def normalize_task_name(name: str) -> str:
    """Lowercase snake_case, [a-z0-9_] only, at most 80 characters."""
    name = re.sub(r"(?<=[a-z0-9])(?=[A-Z])", "_", name.strip())
    name = re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")
    return name[:TASK_NAME_MAX].rstrip("_")


@dataclass
class TaskParseResult:
    tasks: List[TaskSpec] = field(default_factory=list)
    dropped: List[Dict] = field(default_factory=list)


def parse_task_list(payload) -> TaskParseResult:
    """Validate a decoded task array; invalid entries are dropped with a reason."""
    result = TaskParseResult()
    seen = set()
    for index, item in enumerate(payload):
        reason = None
        name = description = ""
        if not isinstance(item, dict):
            reason = "entry is not an object"
        else:
            raw_name = item.get("name")
            raw_description = item.get("description")
            if not isinstance(raw_name, str) or not raw_name.strip():
                reason = "missing name"
            elif not isinstance(raw_description, str) or not raw_description.strip():
                reason = "missing description"
            else:
                name = normalize_task_name(raw_name)
                description = " ".join(raw_description.split())
                if not TASK_NAME_PATTERN.match(name):
                    reason = f"name '{raw_name}' has no usable characters"
                elif name in seen:
                    reason = f"duplicate name '{name}'"
        if reason:
            logger.warning(f"Dropped proposed task #{index}: {reason}")
            result.dropped.append({"index": index, "reason": reason})
            continue
        seen.add(name)
        result.tasks.append(TaskSpec(name=name, description=description))
    return result


def generate_tasks(client: LlmClient, instruction: str, run_id: Optional[int] = None) -> TaskParseResult:
    """
    Ask the LLM for new tasks.

    Raises:
        StepFailed: the call failed or the response holds no task array
    """
    exchange = client.complete(instruction, LlmCall(run_id=run_id, step="task_gen"))
    if not exchange.ok:
        raise StepFailed("task_gen", exchange.failure_reason)

    try:
        payload = extract_json(exchange.response)
    except (NoJsonFound, UnbalancedJson) as e:
        raise StepFailed("task_gen", f"no JSON task array in response ({e})")

    if isinstance(payload, dict) and isinstance(payload.get("tasks"), list):
        payload = payload["tasks"]
    if not isinstance(payload, list):
        raise StepFailed("task_gen", "response JSON is not an array of tasks")

    result = parse_task_list(payload)
    logger.info(f"LLM proposed {len(payload)} tasks, {len(result.tasks)} valid")
    return result


def merge_tasks(previous: Sequence[TaskSpec], new: Sequence[TaskSpec]) -> Tuple[List[TaskSpec], List[TaskSpec]]:
    """
    Returns:
        (merged, fresh): previous followed by new tasks whose normalized
        name is not already known, and just those new tasks
    """
    known = {normalize_task_name(t.name) for t in previous}
    fresh = []
    for task in new:
        key = normalize_task_name(task.name)
        if key in known:
            continue
        known.add(key)
        fresh.append(task)
    return list(previous) + fresh, fresh


def write_task_lists(paths: DomainPaths, merged: Sequence[TaskSpec], fresh: Sequence[TaskSpec]) -> Tuple[Path, Path]:
    tasks_list = write_json(paths.tasks_list, [t.to_dict() for t in merged])
    new_tasks = write_json(paths.summaries_dir / NEW_TASKS_FILE, [t.to_dict() for t in fresh])
    return tasks_list, new_tasks


@dataclass
class TaskGenerationOutcome:
    merged: List[TaskSpec]
    fresh: List[TaskSpec]
    dropped: List[Dict]
    instruction: str
    tasks_list_path: Path
    new_tasks_path: Path


def run_task_generation(
    paths: DomainPaths,
    bundle: DomainBundle,
    template: PromptTemplate,
    summary: ResourceSummary,
    client: LlmClient,
    run_id: Optional[int] = None,
) -> TaskGenerationOutcome:
    """Full step: instruction, LLM call, merge, persistence."""
    instruction = aggregate_instruction(bundle, template, summary)
    parsed = generate_tasks(client, instruction, run_id)
    merged, fresh = merge_tasks(bundle.previous_tasks, parsed.tasks)
    tasks_list_path, new_tasks_path = write_task_lists(paths, merged, fresh)
    logger.info(f"Task generation: {len(fresh)} new tasks, {len(merged)} known in total")
    return TaskGenerationOutcome(merged, fresh, parsed.dropped, instruction, tasks_list_path, new_tasks_path)
