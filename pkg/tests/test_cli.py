"""Tests for the command-line entry point and its exit codes."""

import json

import pytest

import ingestion
from cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, build_parser, main
from config import Paths
from tests.conftest import write_fixture_manifest

TEST_FLAGS = ["--test-clock", "2025-10-29T10:00:00+00:00", "--test-probe", "static"]


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    monkeypatch.delenv("LEI_DATA_TYPE", raising=False)


def run_cli(workspace, *args):
    return main(["--config", str(workspace.config_path), *TEST_FLAGS, *args])


class TestParser:
    def test_command_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_report_run_id(self):
        args = build_parser().parse_args(["report", "--run-id", "3"])
        assert args.command == "report"
        assert args.run_id == 3


class TestExitCodes:
    def test_fixture_run_succeeds(self, workspace, capsys):
        assert run_cli(workspace, "run") == EXIT_OK

        first_line = capsys.readouterr().out.splitlines()[0]
        assert json.loads(first_line) == {"run_id": 1, "steps": {"s1": "ok", "s2": "ok", "s3": "ok", "s4": "ok"}}
        assert (workspace.paths.summaries_dir / Paths.REPORT_FILE).is_file()

    def test_report_out(self, workspace, tmp_path):
        out = tmp_path / "elsewhere" / "report.json"
        assert run_cli(workspace, "--report-out", str(out), "run") == EXIT_OK
        assert json.loads(out.read_text(encoding="utf-8"))["run_ids"] == [1]

    def test_missing_config(self, tmp_path):
        assert main(["--config", str(tmp_path / "absent.conf"), "run"]) == EXIT_CONFIG

    def test_invalid_config(self, workspace):
        workspace.config_path.write_text("data_type=air_quality\nbatch_size_k=0\n", encoding="utf-8")
        assert run_cli(workspace, "run") == EXIT_CONFIG

    def test_unknown_domain(self, workspace):
        assert run_cli(workspace, "--data-type", "ocean_buoys", "run") == EXIT_CONFIG

    def test_failed_step(self, workspace, capsys):
        write_fixture_manifest(workspace.fixture_dir, [{"step": "task_gen", "text": "No JSON here."}])

        assert run_cli(workspace, "run") == EXIT_FAILED
        assert "Halted: s1" in capsys.readouterr().err

    def test_single_step_without_inputs(self, workspace):
        assert run_cli(workspace, "code-gen") == EXIT_FAILED


class TestCommands:
    def test_report_is_reproducible(self, workspace):
        assert run_cli(workspace, "run") == EXIT_OK
        report_path = workspace.paths.summaries_dir / Paths.REPORT_FILE

        assert run_cli(workspace, "report") == EXIT_OK
        first = report_path.read_bytes()
        assert run_cli(workspace, "report") == EXIT_OK
        assert report_path.read_bytes() == first

    def test_report_for_one_run(self, workspace, tmp_path):
        assert run_cli(workspace, "run") == EXIT_OK
        assert run_cli(workspace, "task-gen") == EXIT_OK
        out = tmp_path / "run2.json"

        assert run_cli(workspace, "--report-out", str(out), "report", "--run-id", "2") == EXIT_OK
        report = json.loads(out.read_text(encoding="utf-8"))
        assert report["run_ids"] == [2]
        assert report["runs"][0]["absent_steps"] == ["s2", "s3", "s4"]

    def test_execute_with_empty_repository(self, workspace):
        assert run_cli(workspace, "execute") == EXIT_OK
        assert json.loads((workspace.paths.scripts_dir / "results_1.json").read_text(encoding="utf-8")) == []

    def test_ingest_from_recorded_payloads(self, workspace, capsys):
        assert run_cli(workspace, "ingest", "--count", "3", "--refresh-sample") == EXIT_OK

        status = json.loads(capsys.readouterr().out.split("Sample refreshed")[0])
        assert status["failures"] == 0
        rows = workspace.paths.raw_data.read_text(encoding="utf-8").strip().splitlines()
        assert len(rows) == 4

    def test_ingest_waits_configured_interval_between_live_polls(self, workspace, monkeypatch):
        conf = workspace.config_path.read_text(encoding="utf-8").replace("llm_mode=fixture", "llm_mode=live")
        workspace.config_path.write_text(conf + "poll_interval_s=42\n", encoding="utf-8")
        recorded = ingestion.FixtureFetcher(workspace.fixture_dir / "payloads")
        monkeypatch.setattr(ingestion, "HttpFetcher", lambda: (lambda spec: recorded(spec)))
        sleeps = []
        monkeypatch.setattr("cli.time.sleep", sleeps.append)

        assert run_cli(workspace, "ingest", "--count", "3") == EXIT_OK
        assert sleeps == [42.0, 42.0]
        assert len(workspace.paths.raw_data.read_text(encoding="utf-8").strip().splitlines()) == 4

    def test_monitor_publishes_summary(self, workspace, capsys):
        assert run_cli(workspace, "monitor", "--samples", "3") == EXIT_OK

        summary = json.loads(capsys.readouterr().out)
        assert summary["cpu_avg_pct"]["1m"] == 10.0
        assert workspace.paths.resource_summary.is_file()
