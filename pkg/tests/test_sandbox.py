"""Tests for local script execution."""

import sys

import pytest

import sandbox
from models import ExitStatus
from sandbox import OUTPUT_NOT_JSON, SCRIPT_MISSING, build_argv, execute_locally


def write_script(tmp_path, name, body):
    path = tmp_path / name
    path.write_text(body, encoding="utf-8")
    return path


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("timestamp,value\n2025-10-29T10:00:00+00:00,1\n2025-10-29T10:10:00+00:00,3\n", encoding="utf-8")
    return path


@pytest.fixture(autouse=True)
def reset_tracker():
    sandbox.tracker.reset()
    yield


class TestExecuteLocally:
    def test_success_parses_json(self, tmp_path, data_file):
        script = write_script(
            tmp_path,
            "mean.py",
            "import csv, json, sys\n"
            "rows = list(csv.DictReader(open(sys.argv[1])))\n"
            "print(json.dumps({'mean': sum(float(r['value']) for r in rows) / len(rows)}))\n",
        )
        result = execute_locally(script, data_file, timeout_s=30)

        assert result.ok
        assert result.exit_code == 0
        assert result.parsed_output == {"mean": 2.0}
        assert result.has_output

    def test_nonzero_exit(self, tmp_path, data_file):
        script = write_script(tmp_path, "fail.py", "import sys\nsys.stderr.write('boom')\nsys.exit(3)\n")
        result = execute_locally(script, data_file, timeout_s=30)

        assert result.exit_status == ExitStatus.NONZERO
        assert result.exit_code == 3
        assert "boom" in result.error_text()

    def test_exception_traceback_in_error_text(self, tmp_path, data_file):
        script = write_script(tmp_path, "key.py", "row = {}\nprint(row['nox'])\n")
        result = execute_locally(script, data_file, timeout_s=30)

        assert not result.ok
        assert "KeyError" in result.error_text()

    def test_output_not_json(self, tmp_path, data_file):
        script = write_script(tmp_path, "chatty.py", "print('all good')\n")
        result = execute_locally(script, data_file, timeout_s=30)

        assert result.exit_status == ExitStatus.NONZERO
        assert result.exit_code == 0
        assert result.failure_reason == OUTPUT_NOT_JSON

    def test_timeout_kills_process(self, tmp_path, data_file):
        script = write_script(tmp_path, "slow.py", "import time\ntime.sleep(60)\n")
        result = execute_locally(script, data_file, timeout_s=0.5)

        assert result.exit_status == ExitStatus.TIMED_OUT
        assert result.duration_s >= 0.5
        assert result.duration_s < 30
        assert not sandbox.tracker.active

    def test_missing_script(self, tmp_path, data_file):
        result = execute_locally(tmp_path / "absent.py", data_file, timeout_s=30)

        assert result.exit_status == ExitStatus.SPAWN_ERROR
        assert result.failure_reason == SCRIPT_MISSING

    def test_missing_interpreter(self, tmp_path, data_file):
        script = write_script(tmp_path, "ok.py", "print('{}')\n")
        result = execute_locally(script, data_file, timeout_s=30, runtime_cmd="/nonexistent/runtime {script}")
        assert result.exit_status == ExitStatus.SPAWN_ERROR

    def test_environment_is_allow_listed(self, tmp_path, data_file, monkeypatch):
        monkeypatch.setenv("LEI_TEST_SECRET", "do-not-leak")
        script = write_script(
            tmp_path,
            "env.py",
            "import json, os\nprint(json.dumps({'keys': sorted(os.environ), 'cwd': os.getcwd(), 'home': os.path.realpath(os.environ['HOME'])}))\n",
        )
        result = execute_locally(script, data_file, timeout_s=30)

        assert result.ok
        assert "LEI_TEST_SECRET" not in result.parsed_output["keys"]
        assert result.parsed_output["home"] == result.parsed_output["cwd"]
        assert str(tmp_path) not in result.parsed_output["cwd"]

    def test_output_is_capped(self, tmp_path, data_file):
        script = write_script(tmp_path, "loud.py", "print('x' * 5000)\n")
        result = execute_locally(script, data_file, timeout_s=30, output_cap=100)

        assert len(result.stdout) == 100
        assert result.failure_reason == OUTPUT_NOT_JSON

    def test_one_process_at_a_time(self, tmp_path, data_file):
        script = write_script(tmp_path, "ok.py", "print('[]')\n")
        for _ in range(3):
            assert execute_locally(script, data_file, timeout_s=30).ok

        assert sandbox.tracker.started == 3
        assert sandbox.tracker.peak == 1


class TestBuildArgv:
    def test_placeholders_substituted_per_token(self, tmp_path):
        script = tmp_path / "a b.py"
        data = tmp_path / "data.csv"
        argv = build_argv("{python} -u {script} --data={data}", script, data)

        assert argv[0] == sys.executable
        assert argv[2] == str(script.resolve())
        assert argv[3] == f"--data={data.resolve()}"
