"""
Daemon state for the edge device: background resource sampler, source
poller, and at most one pipeline run at a time.
"""

import logging
import os
import threading
from typing import Any, Dict, List, Optional

import psutil

from config import AppConfig, Paths, PipelineConfig, load_config
from errors import LeiError
from ingestion import SourcePoller, build_source_poller, load_task_list
from metrics_publisher import build_report, load_manifests
from pipeline import Pipeline, PipelineResult
from resource_monitor import read_summary


class EdgeManager:
    def __init__(self, cfg: Optional[PipelineConfig] = None, clock=None, probe=None, backend=None):
        self.logger = logging.getLogger(__name__)
        self.cfg = cfg or load_config(Paths.DEFAULT_CONFIG_FILE)
        self.pipeline = Pipeline(self.cfg, clock=clock, probe=probe, backend=backend)
        self.monitor = self.pipeline.monitor
        self.poller = self._build_poller()

        self._run_lock = threading.Lock()
        self._run_thread: Optional[threading.Thread] = None
        self.last_result: Optional[PipelineResult] = None
        self.last_error: Optional[str] = None
        self.report_cache: Dict[Optional[int], Dict[str, Any]] = {}

        self.logger.info(f"Edge manager ready for '{self.cfg.data_type}' (model {self.cfg.backend.model_id})")

    @property
    def paths(self):
        return self.pipeline.paths

    def _build_poller(self) -> Optional[SourcePoller]:
        source = self.pipeline.paths.source
        if not source.is_file():
            self.logger.info(f"No {source.name} for '{self.cfg.data_type}'; source poller disabled")
            return None
        try:
            return build_source_poller(self.cfg, self.pipeline.paths, self.pipeline.clock)
        except LeiError as e:
            self.logger.error(f"Source poller disabled: {e}")
            return None

    def start_background(self) -> None:
        self.monitor.start()
        if self.poller:
            self.poller.start()

    def stop_background(self) -> None:
        self.monitor.stop()
        if self.poller:
            self.poller.stop()

    # Runs

    @property
    def run_in_progress(self) -> bool:
        return bool(self._run_thread and self._run_thread.is_alive())

    def trigger_run(self) -> bool:
        """Start a full pipeline run in the background; False if one is already running."""
        if not self._run_lock.acquire(blocking=False):
            return False
        self._run_thread = threading.Thread(target=self._run, name="lei-pipeline-run", daemon=True)
        self._run_thread.start()
        return True

    def _run(self):
        try:
            self.last_result = self.pipeline.run()
            self.last_error = None
        except Exception as e:
            self.last_error = str(e)
            self.logger.error(f"Pipeline run crashed: {e}")
        finally:
            self.report_cache.clear()
            self._run_lock.release()

    def wait(self, timeout: Optional[float] = None) -> bool:
        """Wait for the current run; True when no run is left in progress."""
        thread = self._run_thread
        if thread:
            thread.join(timeout)
        return not self.run_in_progress

    # Views

    def resources(self) -> Dict[str, Any]:
        if self.monitor.snapshot():
            return self.monitor.summary(fresh=False).to_dict()
        return read_summary(self.paths.resource_summary).to_dict()

    def tasks(self) -> List[Dict[str, str]]:
        if not self.paths.tasks_list.is_file():
            return []
        return [task.to_dict() for task in load_task_list(self.paths.tasks_list)]

    def repository(self) -> Dict[str, Any]:
        repo = self.pipeline.repository
        return {
            "entries": [
                {
                    "task_name": entry.task_name,
                    "path": entry.path.name,
                    "validated_at": entry.validated_at.isoformat(),
                    "sha256": entry.sha256,
                }
                for entry in repo.entries()
            ],
            "problems": repo.verify(),
        }

    def report(self, run_id: Optional[int] = None) -> Dict[str, Any]:
        if run_id not in self.report_cache:
            self.report_cache[run_id] = build_report(self.cfg.logs_root, run_id)
        return self.report_cache[run_id]

    def latest_run(self) -> Optional[Dict[str, Any]]:
        manifests = load_manifests(self.cfg.logs_root)
        return manifests[-1].to_dict() if manifests else None

    def status(self) -> Dict[str, Any]:
        return {
            "data_type": self.cfg.data_type,
            "model_id": self.cfg.backend.model_id,
            "run_in_progress": self.run_in_progress,
            "last_error": self.last_error,
            "monitor": {"running": self.monitor.running, "samples": len(self.monitor.snapshot()), "failures": self.monitor.failures},
            "poller": self.poller.status() if self.poller else None,
        }

    def _clean_up(self):
        """Drop cached reports when the daemon grows past its memory limit."""
        process = psutil.Process(os.getpid())
        mem_in_mb = process.memory_info().rss / (1024 * 1024)
        self.logger.debug(f"Current memory usage: {mem_in_mb:.2f} MB")
        if mem_in_mb > AppConfig.MEMORY_LIMIT_MB:
            self.report_cache.clear()
            self.logger.info(f"Memory limit exceeded ({mem_in_mb:.2f} MB). Cleared report cache.")
