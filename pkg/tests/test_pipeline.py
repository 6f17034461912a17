"""End-to-end runs of the four steps against recorded LLM responses."""

import json
import random
import shutil
from datetime import timedelta

import pytest

from artifacts import read_json, read_jsonl
from clock import TickingClock
from config import Paths, load_config, with_overrides
from errors import ProbeUnavailable
from models import ResourceSummary, StepStatus
from pipeline import Pipeline, manifest_path, next_run_id, run_pipeline
from resource_monitor import ScriptedProbe, StaticProbe, write_summary
from tests.conftest import START, write_fixture_manifest

FIXTURE_TASKS = ["pollutant_24h_extremes_reporter", "traffic_freshness_indicator_no_no2_ratio", "aqi_poor_streak"]


def fixture_run(workspace, **kwargs):
    return run_pipeline(workspace.cfg, clock=TickingClock(START), probe=StaticProbe(), **kwargs)


class TestRunCounter:
    def test_increments(self, tmp_path):
        assert [next_run_id(tmp_path) for _ in range(3)] == [1, 2, 3]
        assert (tmp_path / Paths.RUN_COUNTER_FILE).read_text(encoding="utf-8") == "3\n"


class TestFullRun:
    def test_all_green(self, workspace):
        result = fixture_run(workspace)
        report = result.report

        assert result.exit_code == 0
        assert all(status == StepStatus.OK for status in result.manifest.steps.values())
        assert result.manifest_path == manifest_path(workspace.cfg.logs_root, 1)
        for name in ("tasks_proposed", "scripts_generated", "reached_validator", "passed", "reached_step4", "executed_ok"):
            assert report["counts"][name] == 3, name
        assert report["counts"]["failed"] == 0
        assert report["reliability"] == 1.0
        assert report["execution_success_rate"]["value"] == 1.0
        assert sum(step["calls"] for step in report["throughput"]["per_step"].values()) == 4
        assert report["throughput"]["per_step"]["fix"]["calls"] == 1
        assert result.report_path == workspace.paths.summaries_dir / Paths.REPORT_FILE
        assert json.loads(result.report_path.read_text(encoding="utf-8")) == report

    def test_artifacts_on_disk(self, workspace):
        fixture_run(workspace)
        paths = workspace.paths

        index = read_json(paths.repository_dir / "index.json")
        assert sorted(index) == sorted(FIXTURE_TASKS)
        assert [t["name"] for t in read_json(paths.tasks_list)] == FIXTURE_TASKS
        results = read_json(paths.scripts_dir / "results_1.json")
        assert {r["status"] for r in results} == {"SUCCESS"}
        assert paths.resource_summary.is_file()

        timings = read_jsonl(workspace.cfg.logs_root / Paths.STEP_TIMINGS_LOG)
        assert [t["step"] for t in timings] == ["s1", "s2", "s3", "s4"]
        exchanges = read_jsonl(workspace.cfg.logs_root / Paths.EXCHANGE_LOG)
        assert [e["step"] for e in exchanges] == ["task_gen", "code_gen", "code_gen", "fix"]

    def test_deterministic_report(self, workspace, tmp_path_factory):
        second_root = tmp_path_factory.mktemp("second") / "lei"
        shutil.copytree(workspace.root, second_root)

        first = fixture_run(workspace)
        second = run_pipeline(load_config(second_root / "lei.conf", env={}), clock=TickingClock(START), probe=StaticProbe())

        assert first.report == second.report
        assert first.report_path.read_bytes() == second.report_path.read_bytes()


class TestHaltedRun:
    def test_prose_at_task_generation(self, workspace):
        write_fixture_manifest(
            workspace.fixture_dir, [{"step": "task_gen", "text": "Consider tracking PM2.5 peaks over the day."}]
        )
        result = fixture_run(workspace)

        assert result.exit_code == 2
        assert result.manifest.steps == {
            "s1": StepStatus.FAILED,
            "s2": StepStatus.SKIPPED,
            "s3": StepStatus.SKIPPED,
            "s4": StepStatus.SKIPPED,
        }
        assert result.manifest.failure.startswith("s1:")
        timings = read_jsonl(workspace.cfg.logs_root / Paths.STEP_TIMINGS_LOG)
        assert [t["step"] for t in timings] == ["s1"]
        assert read_json(result.manifest_path)["steps"]["s1"] == "failed"

    def test_busy_device_skips_every_script(self, workspace):
        result = run_pipeline(
            workspace.cfg,
            clock=TickingClock(START),
            probe=StaticProbe(cpu_pct=99.0, mem_used_pct=95.0, mem_available_mb=64.0),
        )

        assert result.exit_code == 0
        assert result.report["counts"]["skipped_executions"] == 3
        assert result.report["counts"]["reached_step4"] == 0
        assert result.report["execution_success_rate"]["value"] is None

    def test_stale_published_summary_skips_every_script(self, workspace):
        stale = ResourceSummary(
            timestamp=START - timedelta(days=3),
            cpu_cores=4,
            mem_available_mb=2048.0,
            cpu_avg_pct={"1m": 10.0, "5m": 10.0, "10m": 10.0, "30m": 10.0},
            mem_avg_pct={"1m": 40.0, "5m": 40.0, "10m": 40.0, "30m": 40.0},
        )
        write_summary(stale, workspace.paths.resource_summary)

        result = run_pipeline(
            workspace.cfg,
            clock=TickingClock(START),
            probe=ScriptedProbe([ProbeUnavailable("no /proc")]),
        )

        assert result.exit_code == 0
        assert result.report["counts"]["skipped_executions"] == 3
        assert result.report["counts"]["executed_ok"] == 0
        statuses = {r["status"] for r in read_json(workspace.paths.scripts_dir / "results_1.json")}
        assert statuses == {"SKIPPED_RESOURCES"}

    def test_summary_age_limit_follows_sampling_interval(self, workspace):
        cfg = with_overrides(workspace.cfg, sampling_interval_s=7.0)
        pipeline = Pipeline(cfg, clock=TickingClock(START), probe=StaticProbe())
        assert pipeline.thresholds.max_age_s == 14


class TestSingleSteps:
    def pipeline(self, workspace):
        return Pipeline(workspace.cfg, clock=TickingClock(START), probe=StaticProbe())

    def test_steps_chain_through_files(self, workspace):
        pipeline = self.pipeline(workspace)

        first = pipeline.run(["s1"], with_report=False)
        second = pipeline.run(["s2"], with_report=False)
        third = pipeline.run(["s3"], with_report=False)

        assert [r.manifest.run_id for r in (first, second, third)] == [1, 2, 3]
        assert second.manifest.counts["tasks_proposed"] == 3
        assert second.manifest.counts["scripts_generated"] == 3
        assert third.manifest.steps["s3"] == StepStatus.OK
        assert third.manifest.steps["s1"] == StepStatus.SKIPPED
        assert third.report is None
        assert len(pipeline.repository) == 3

    def test_code_generation_without_new_tasks(self, workspace):
        result = self.pipeline(workspace).run(["s2"], with_report=False)

        assert result.exit_code == 2
        assert result.manifest.steps["s2"] == StepStatus.FAILED

    def test_execute_with_empty_repository(self, workspace):
        result = self.pipeline(workspace).run(["s4"], with_report=False)

        assert result.exit_code == 0
        assert read_json(workspace.paths.scripts_dir / f"results_{result.manifest.run_id}.json") == []


COUNTING_SCRIPT = (
    "import json\nimport sys\n\nwith open(sys.argv[1]) as handle:\n"
    "    rows = handle.read().splitlines()\nprint(json.dumps({\"rows\": len(rows) - 1}))\n"
)
BROKEN_SCRIPT = "import sys\n\nsys.exit(\"column nox not found\")\n"


class TestMultiRunFunnel:
    """Ten runs proposing 50 tasks: 2 lost at code generation, 17 failing validation after both fixes."""

    RUNS = 10
    TASKS_PER_RUN = 5
    MISSING = {(3, "run3_task1"), (7, "run7_task1")}

    def write_manifest(self, workspace):
        rng = random.Random(48)
        names = {run: [f"run{run}_task{i}" for i in range(self.TASKS_PER_RUN)] for run in range(1, self.RUNS + 1)}
        generated = [name for run, run_names in names.items() for name in run_names if (run, name) not in self.MISSING]
        hopeless = rng.sample(generated, 17)
        fixable = rng.sample([name for name in generated if name not in hopeless], 4)

        entries = []
        for run, run_names in names.items():
            tasks = [{"name": name, "description": f"Count readings for {name}"} for name in run_names]
            entries.append({"run": run, "step": "task_gen", "text": "```json\n" + json.dumps(tasks) + "\n```"})
            for batch_index, start in enumerate(range(0, len(run_names), 2)):
                items = [
                    {"name": name, "code": BROKEN_SCRIPT if name in hopeless or name in fixable else COUNTING_SCRIPT}
                    for name in run_names[start : start + 2]
                    if (run, name) not in self.MISSING
                ]
                entries.append({"run": run, "step": "code_gen", "key": str(batch_index), "text": json.dumps(items)})
        for name in hopeless:
            for attempt in (1, 2):
                code = f"raise KeyError(\"nox, attempt {attempt}\")\n"
                entries.append({"step": "fix", "key": name, "attempt": attempt, "text": json.dumps({"code": code})})
        for name in fixable:
            entries.append({"step": "fix", "key": name, "attempt": 1, "text": json.dumps({"code": COUNTING_SCRIPT})})
        write_fixture_manifest(workspace.fixture_dir, entries)
        return hopeless, fixable

    def test_counts_and_reliability(self, workspace):
        hopeless, fixable = self.write_manifest(workspace)
        pipeline = Pipeline(workspace.cfg, clock=TickingClock(START), probe=StaticProbe())

        results = [pipeline.run(["s1", "s2", "s3"]) for _ in range(self.RUNS)]

        assert [r.exit_code for r in results] == [0] * self.RUNS
        report = results[-1].report
        assert report["run_ids"] == list(range(1, self.RUNS + 1))
        counts = report["counts"]
        assert counts["tasks_proposed"] == 50
        assert counts["scripts_generated"] == 48
        assert counts["generation_failures"] == 2
        assert counts["codegen_ledger_failures"] == 2
        assert counts["reached_validator"] == 48
        assert counts["passed"] == 31
        assert counts["failed"] == 17
        assert report["reliability"] == pytest.approx(31 / 48, abs=1e-9)

        history = read_jsonl(workspace.cfg.logs_root / Paths.VALIDATION_HISTORY_LOG)
        after_fix = sorted(h["task_name"] for h in history if h["status"] == "passed_after_fix")
        failed = sorted(h["task_name"] for h in history if h["status"] == "failed")
        assert after_fix == sorted(fixable)
        assert failed == sorted(hopeless)
        assert len(read_json(workspace.paths.repository_dir / "index.json")) == 31


@pytest.mark.parametrize("steps", [["s1"], ["s1", "s2"]])
def test_partial_runs_write_manifest(workspace, steps):
    result = Pipeline(workspace.cfg, clock=TickingClock(START), probe=StaticProbe()).run(steps, with_report=False)

    manifest = read_json(result.manifest_path)
    assert [s for s, status in manifest["steps"].items() if status == "ok"] == steps
    assert manifest["finished_at"] is not None
