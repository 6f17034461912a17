"""
Local script execution in a separate process.
Each run gets a fresh temp working directory, an allow-listed environment,
capped stdout/stderr capture and a hard kill of the whole process tree at the
timeout.
"""

import json
import logging
import os
import shlex
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
from pathlib import Path
from typing import Dict, List, Optional

import psutil

from clock import SystemClock
from models import ExitStatus, SandboxResult

logger = logging.getLogger(__name__)

OUTPUT_CAP_BYTES = 1024 * 1024

# Variables copied from the parent environment when present
ENV_ALLOW_LIST = ("PATH", "LANG", "LC_ALL", "SYSTEMROOT", "TZ")

OUTPUT_NOT_JSON = "OutputNotJson"
SCRIPT_MISSING = "ScriptMissing"


class ProcessTracker:
    """Counts live sandbox children; peak is the most ever alive at once."""

    def __init__(self):
        self._lock = threading.Lock()
        self.active = set()
        self.peak = 0
        self.started = 0

    def enter(self, pid: int) -> None:
        with self._lock:
            self.active.add(pid)
            self.started += 1
            self.peak = max(self.peak, len(self.active))

    def leave(self, pid: int) -> None:
        with self._lock:
            self.active.discard(pid)

    def reset(self) -> None:
        with self._lock:
            self.active.clear()
            self.peak = 0
            self.started = 0


tracker = ProcessTracker()


def build_argv(runtime_cmd: str, script, data_path) -> List[str]:
    """Tokenize the runtime template and substitute placeholders per token."""
    substitutions = {
        "{script}": str(Path(script).resolve()),
        "{data}": str(Path(data_path).resolve()) if data_path is not None else "",
        "{python}": sys.executable,
    }
    argv = []
    for token in shlex.split(runtime_cmd):
        for placeholder, value in substitutions.items():
            token = token.replace(placeholder, value)
        argv.append(token)
    return argv


def sandbox_env(workdir: str) -> Dict[str, str]:
    env = {key: os.environ[key] for key in ENV_ALLOW_LIST if key in os.environ}
    env.update(
        {
            "HOME": workdir,
            "TMPDIR": workdir,
            "PYTHONDONTWRITEBYTECODE": "1",
            "PYTHONIOENCODING": "utf-8",
        }
    )
    return env


def kill_process_tree(pid: int) -> None:
    """Kill a process and every descendant."""
    try:
        parent = psutil.Process(pid)
        children = parent.children(recursive=True)
    except psutil.NoSuchProcess:
        return
    for process in children + [parent]:
        try:
            process.kill()
        except psutil.NoSuchProcess:
            pass
    if os.name == "posix":
        try:
            os.killpg(pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError, OSError):
            pass
    psutil.wait_procs(children + [parent], timeout=2)


def _read_capped(handle, cap: int) -> str:
    handle.seek(0)
    data = handle.read(cap + 1)
    if len(data) > cap:
        data = data[:cap]
    return data.decode("utf-8", errors="replace")


def execute_locally(
    script,
    data_path,
    timeout_s: float,
    runtime_cmd: str = "{python} {script} {data}",
    clock=None,
    output_cap: int = OUTPUT_CAP_BYTES,
) -> SandboxResult:
    """
    Run one script against a data file.

    Success requires exit code 0 and stdout that parses as JSON. Spawn
    errors, non-zero exits, non-JSON output and timeouts are all reported in
    the result; nothing is raised.
    """
    clock = clock or SystemClock()
    script = Path(script)
    if not script.is_file():
        return SandboxResult(
            exit_status=ExitStatus.SPAWN_ERROR,
            failure_reason=SCRIPT_MISSING,
            stderr=f"Script not found: {script}",
        )

    argv = build_argv(runtime_cmd, script, data_path)
    workdir = tempfile.mkdtemp(prefix="lei_sandbox_")
    started = clock.monotonic()
    timed_out = False
    process = None

    try:
        with tempfile.TemporaryFile() as out, tempfile.TemporaryFile() as err:
            try:
                process = subprocess.Popen(
                    argv,
                    cwd=workdir,
                    env=sandbox_env(workdir),
                    stdin=subprocess.DEVNULL,
                    stdout=out,
                    stderr=err,
                    start_new_session=(os.name == "posix"),
                )
            except OSError as e:
                logger.error(f"Failed to start {argv[0]!r}: {e}")
                return SandboxResult(
                    exit_status=ExitStatus.SPAWN_ERROR,
                    failure_reason=type(e).__name__,
                    stderr=str(e),
                    duration_s=max(0.0, clock.monotonic() - started),
                )

            tracker.enter(process.pid)
            try:
                process.wait(timeout=timeout_s)
            except subprocess.TimeoutExpired:
                timed_out = True
                logger.warning(f"{script.name} exceeded {timeout_s}s, killing process tree {process.pid}")
                kill_process_tree(process.pid)
                process.wait()
            finally:
                tracker.leave(process.pid)

            duration = max(0.0, clock.monotonic() - started)
            stdout = _read_capped(out, output_cap)
            stderr = _read_capped(err, output_cap)
    finally:
        shutil.rmtree(workdir, ignore_errors=True)

    if timed_out:
        return SandboxResult(
            exit_status=ExitStatus.TIMED_OUT,
            failure_reason=f"Timed out after {timeout_s}s",
            stdout=stdout,
            stderr=stderr,
            duration_s=max(duration, timeout_s),
            pid=process.pid,
        )

    if process.returncode != 0:
        return SandboxResult(
            exit_status=ExitStatus.NONZERO,
            exit_code=process.returncode,
            failure_reason=f"Exited with code {process.returncode}",
            stdout=stdout,
            stderr=stderr,
            duration_s=duration,
            pid=process.pid,
        )

    try:
        parsed = json.loads(stdout)
    except ValueError:
        return SandboxResult(
            exit_status=ExitStatus.NONZERO,
            exit_code=0,
            failure_reason=OUTPUT_NOT_JSON,
            stdout=stdout,
            stderr=stderr,
            duration_s=duration,
            pid=process.pid,
        )

    return SandboxResult(
        exit_status=ExitStatus.SUCCESS,
        exit_code=0,
        stdout=stdout,
        stderr=stderr,
        duration_s=duration,
        parsed_output=parsed,
        has_output=True,
        pid=process.pid,
    )
