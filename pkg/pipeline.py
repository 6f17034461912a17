"""
The four-step pipeline: task generation, code generation, validation and
execution, with step timing markers, run manifests and the report.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from artifacts import append_jsonl, atomic_write_text, write_json
from clock import SystemClock
from code_generator import CODE_GENERATION_PLACEHOLDERS, CODE_GENERATION_TEMPLATE, CodeGenerationOutcome, run_code_generation
from config import Paths, PipelineConfig, resolve_domain_paths
from errors import EmptySeries, LeiError, MissingFile, ProbeUnavailable, StepFailed
from ingestion import DomainBundle, load_domain_bundle, load_task_list
from llm_client import LlmClient, build_backend
from metrics_publisher import publish_report
from models import STEP_NAMES, STEPS, GeneratedScript, ResourceSummary, RunManifest, ScriptOrigin, StepStatus, StepTiming, TaskSpec
from resource_monitor import ResourceMonitor, read_summary
from scheduler import Thresholds, execute_validated, publish_outputs
from task_generator import (
    NEW_TASKS_FILE,
    TASK_GENERATION_PLACEHOLDERS,
    TASK_GENERATION_TEMPLATE,
    PromptTemplate,
    run_task_generation,
)
from validator import (
    VALIDATION_FIX_PLACEHOLDERS,
    VALIDATION_FIX_TEMPLATE,
    VALIDATOR_SUMMARY_FILE,
    IntelligenceRepository,
    ValidationSettings,
    run_validation,
)

logger = logging.getLogger(__name__)


def next_run_id(logs_root) -> int:
    """Increment and return the run counter kept under logs_root."""
    path = Path(logs_root) / Paths.RUN_COUNTER_FILE
    current = 0
    if path.is_file():
        text = path.read_text(encoding="utf-8").strip()
        current = int(text) if text.isdigit() else 0
    run_id = current + 1
    atomic_write_text(path, f"{run_id}\n")
    return run_id


def manifest_path(logs_root, run_id: int) -> Path:
    return Path(logs_root) / Paths.RUNS_DIR / f"run_{run_id:06d}.json"


@dataclass
class PipelineResult:
    manifest: RunManifest
    manifest_path: Path
    report: Optional[Dict] = None
    report_path: Optional[Path] = None

    @property
    def exit_code(self) -> int:
        return 0 if self.manifest.failure is None else 2


@dataclass
class _RunState:
    """Outputs handed from one step to the next within a run."""

    bundle: Optional[DomainBundle] = None
    fresh_tasks: Optional[List[TaskSpec]] = None
    scripts: Optional[List[GeneratedScript]] = None
    counts: Dict[str, int] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)


class Pipeline:
    """
    Runs the steps for one domain. Each run gets a run id, a manifest under
    logs/runs and timing and resource records for every step it starts.
    A failed step halts the run; the remaining steps stay skipped.
    """

    def __init__(self, cfg: PipelineConfig, clock=None, probe=None, backend=None, monitor: Optional[ResourceMonitor] = None):
        self.logger = logging.getLogger(__name__)
        self.cfg = cfg
        self.clock = clock or SystemClock()
        self.paths = resolve_domain_paths(cfg)
        self.logs_root = Path(cfg.logs_root)
        self.monitor = monitor or ResourceMonitor(
            probe=probe,
            clock=self.clock,
            interval_s=cfg.sampling_interval_s,
            windows=cfg.windows_min,
            summary_path=self.paths.resource_summary,
            model_id=cfg.backend.model_id,
        )
        self.backend = backend or build_backend(cfg.backend)
        self.client = LlmClient(
            self.backend,
            cfg.llm_call_timeout_s,
            self.clock,
            exchange_log=self.logs_root / Paths.EXCHANGE_LOG,
            model_id=cfg.backend.model_id,
        )
        # A summary older than two sampling intervals counts as missing
        self.thresholds = Thresholds(cfg.cpu_max_pct, cfg.mem_min_available_mb, max_age_s=2 * cfg.sampling_interval_s)

    def template(self, name: str, placeholders: Sequence[str]) -> PromptTemplate:
        return PromptTemplate.load(self.cfg.prompts_root, name, placeholders)

    @property
    def repository(self) -> IntelligenceRepository:
        return IntelligenceRepository(self.paths.repository_dir, self.cfg.script_extension)

    def current_summary(self) -> ResourceSummary:
        """Publish a fresh summary; fall back to the last published one if the probe fails."""
        try:
            return self.monitor.publish()
        except (ProbeUnavailable, EmptySeries) as e:
            self.logger.warning(f"Fresh resource summary unavailable ({e}); using the published one")
            return read_summary(self.paths.resource_summary)

    @contextmanager
    def _timed(self, run_id: int, step: str):
        """Step marker: timing and resource aggregates are logged even when the step fails."""
        self.monitor.begin_step(run_id, step)
        start = self.clock.now()
        try:
            yield
        finally:
            timing = StepTiming(step, start, self.clock.now())
            append_jsonl(self.logs_root / Paths.STEP_TIMINGS_LOG, {"run_id": run_id, **timing.to_dict()})
            for aggregate in self.monitor.end_step(run_id, step):
                append_jsonl(self.logs_root / Paths.STEP_RESOURCES_LOG, aggregate.to_dict())
            self.logger.info(f"Run {run_id} step {step} ({STEP_NAMES[step]}) took {timing.duration_s:.3f}s")

    # Steps

    def _task_generation(self, run_id: int, state: _RunState) -> None:
        template = self.template(TASK_GENERATION_TEMPLATE, TASK_GENERATION_PLACEHOLDERS)
        outcome = run_task_generation(self.paths, state.bundle, template, self.current_summary(), self.client, run_id)
        state.fresh_tasks = outcome.fresh
        state.counts["tasks_proposed"] = len(outcome.fresh)
        state.counts["dropped_tasks"] = len(outcome.dropped)
        state.artifacts["tasks_list"] = str(outcome.tasks_list_path)
        state.artifacts["new_tasks"] = str(outcome.new_tasks_path)

    def _code_generation(self, run_id: int, state: _RunState) -> None:
        tasks = state.fresh_tasks
        if tasks is None:
            new_tasks = self.paths.summaries_dir / NEW_TASKS_FILE
            if not new_tasks.is_file():
                raise MissingFile(new_tasks)
            tasks = load_task_list(new_tasks)
            state.counts["tasks_proposed"] = len(tasks)

        outcome: CodeGenerationOutcome = run_code_generation(
            tasks,
            state.bundle,
            self.template(CODE_GENERATION_TEMPLATE, CODE_GENERATION_PLACEHOLDERS),
            self.client,
            self.paths.scripts_dir,
            self.cfg.batch_size_k,
            self.cfg.script_extension,
            run_id,
            self.clock,
            self.logs_root / Paths.CODEGEN_FAILURE_LOG,
        )
        state.scripts = outcome.scripts
        state.counts["scripts_generated"] = len(outcome.scripts)
        state.counts["generation_failures"] = len(outcome.failures)
        state.artifacts["scripts_dir"] = str(self.paths.scripts_dir)
        if tasks and outcome.all_batches_failed:
            raise StepFailed("code_gen", f"all {outcome.batches} batches failed")

    def scripts_for_validation(self) -> List[GeneratedScript]:
        """
        Scripts named in new_tasks.json that exist in the scripts folder, or
        every script there when new_tasks.json is absent.
        """
        scripts_dir = self.paths.scripts_dir
        extension = self.cfg.script_extension
        new_tasks = self.paths.summaries_dir / NEW_TASKS_FILE
        if new_tasks.is_file():
            tasks = load_task_list(new_tasks)
            candidates = [(t.name, t.description, scripts_dir / f"{t.name}{extension}") for t in tasks]
        else:
            candidates = [(p.stem, "", p) for p in sorted(scripts_dir.glob(f"*{extension}"))]

        scripts = []
        for name, description, path in candidates:
            if not path.is_file():
                continue
            scripts.append(
                GeneratedScript(
                    task_name=name,
                    source=path.read_text(encoding="utf-8"),
                    origin=ScriptOrigin.GENERATED,
                    created_at=self.clock.now(),
                    path=str(path),
                    description=description,
                )
            )
        return scripts

    def _validation(self, run_id: int, state: _RunState) -> None:
        scripts = state.scripts
        if scripts is None:
            scripts = self.scripts_for_validation()
            state.counts["scripts_generated"] = len(scripts)
            state.counts.setdefault("tasks_proposed", len(scripts))

        settings = ValidationSettings(
            sample_path=self.paths.sample,
            scripts_dir=self.paths.scripts_dir,
            max_fix_attempts=self.cfg.max_fix_attempts_A,
            timeout_s=self.cfg.validation_exec_timeout_s,
            runtime_cmd=self.cfg.script_runtime_cmd,
            extension=self.cfg.script_extension,
        )
        outcome = run_validation(
            scripts,
            settings,
            self.client,
            self.template(VALIDATION_FIX_TEMPLATE, VALIDATION_FIX_PLACEHOLDERS),
            self.repository,
            self.paths.summaries_dir / VALIDATOR_SUMMARY_FILE,
            run_id,
            self.clock,
            self.logs_root / Paths.VALIDATION_HISTORY_LOG,
        )
        state.artifacts["validator_summary"] = str(outcome.summary_path)
        state.artifacts["repository"] = str(self.paths.repository_dir)

    def _execution(self, run_id: int, state: _RunState) -> None:
        raw_data = self.paths.raw_data
        if not raw_data.is_file():
            self.logger.warning(f"{raw_data} not found; executing against {self.paths.sample}")
            raw_data = self.paths.sample

        records = execute_validated(
            self.repository.entries(),
            raw_data,
            self.cfg.script_runtime_cmd,
            self.cfg.validation_exec_timeout_s,
            self.current_summary,
            self.thresholds,
            run_id,
            self.logs_root,
            self.clock,
        )
        results = publish_outputs(records, self.paths.scripts_dir, run_id)
        state.artifacts["results"] = str(results)

    _STEP_FUNCTIONS = {
        "s1": "_task_generation",
        "s2": "_code_generation",
        "s3": "_validation",
        "s4": "_execution",
    }

    def run(self, steps: Sequence[str] = STEPS, report_out=None, with_report: bool = True) -> PipelineResult:
        """
        Run the requested steps in order. Steps not requested are skipped;
        the first failure halts the chain.
        """
        self.paths = resolve_domain_paths(self.cfg)
        run_id = next_run_id(self.logs_root)
        manifest = RunManifest(run_id, self.cfg.data_type, self.cfg.backend.model_id, self.clock.now())
        state = _RunState()
        self.logger.info(f"Run {run_id} started for '{self.cfg.data_type}': steps {', '.join(steps)}")

        for step in STEPS:
            if step not in steps:
                continue
            with self._timed(run_id, step):
                try:
                    if state.bundle is None and step != "s4":
                        state.bundle = load_domain_bundle(self.paths)
                    getattr(self, self._STEP_FUNCTIONS[step])(run_id, state)
                    manifest.steps[step] = StepStatus.OK
                except LeiError as e:
                    manifest.steps[step] = StepStatus.FAILED
                    manifest.failure = f"{step}: {e}"
                    self.logger.error(f"Run {run_id} halted at {step} ({STEP_NAMES[step]}): {e}")
            if manifest.failure:
                break

        manifest.counts = dict(state.counts)
        manifest.artifacts = dict(state.artifacts)
        manifest.finished_at = self.clock.now()
        path = manifest_path(self.logs_root, run_id)
        write_json(path, manifest.to_dict())

        result = PipelineResult(manifest, path)
        if with_report:
            result.report_path = Path(report_out) if report_out else self.paths.summaries_dir / Paths.REPORT_FILE
            try:
                result.report = publish_report(self.logs_root, result.report_path)
            except LeiError as e:
                self.logger.error(f"Report for run {run_id} not written: {e}")
                result.report_path = None
        status = "completed" if manifest.failure is None else "halted"
        self.logger.info(f"Run {run_id} {status}")
        return result


def run_pipeline(cfg: PipelineConfig, clock=None, probe=None, backend=None, report_out=None) -> PipelineResult:
    """Full run of all four steps; always writes the manifest and the report."""
    return Pipeline(cfg, clock=clock, probe=probe, backend=backend).run(STEPS, report_out=report_out)
