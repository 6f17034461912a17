"""
Resource monitor for the edge device.
Samples CPU and memory on a fixed cadence, keeps a ring buffer covering the
largest averaging window, publishes resource_usage_summary.json and computes
per-step utilization aggregates.
"""

import logging
import math
import threading
from collections import deque
from datetime import datetime, timedelta
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import psutil

from artifacts import read_json, write_json
from clock import SystemClock
from errors import EmptyRuns, EmptySeries, MalformedJson, MixedKey, ProbeUnavailable
from models import ResourceSample, ResourceSummary, RunAggregate

logger = logging.getLogger(__name__)

MB = 1024 * 1024
CPU = "cpu"
MEMORY = "memory"


class PsutilProbe:
    """Reads system-wide CPU and memory through psutil."""

    def __init__(self):
        # First cpu_percent call only primes the counter
        psutil.cpu_percent(interval=None)

    def read(self) -> Dict[str, float]:
        memory = psutil.virtual_memory()
        return {
            "cpu_pct": psutil.cpu_percent(interval=None),
            "mem_used_pct": memory.percent,
            "mem_available_mb": memory.available / MB,
        }

    def cpu_cores(self) -> int:
        return psutil.cpu_count(logical=True) or 1


class StaticProbe:
    """Probe that always reports the same values."""

    def __init__(self, cpu_pct: float = 10.0, mem_used_pct: float = 40.0, mem_available_mb: float = 2048.0, cores: int = 4):
        self.values = {
            "cpu_pct": cpu_pct,
            "mem_used_pct": mem_used_pct,
            "mem_available_mb": mem_available_mb,
        }
        self.cores = cores

    def read(self) -> Dict[str, float]:
        return dict(self.values)

    def cpu_cores(self) -> int:
        return self.cores


class ScriptedProbe:
    """Probe replaying a list of readings; the last one repeats forever."""

    def __init__(self, readings: Sequence[Dict[str, float]], cores: int = 4):
        if not readings:
            raise ValueError("ScriptedProbe needs at least one reading")
        self.readings = list(readings)
        self.cores = cores
        self.calls = 0

    def read(self) -> Dict[str, float]:
        reading = self.readings[min(self.calls, len(self.readings) - 1)]
        self.calls += 1
        if isinstance(reading, Exception):
            raise reading
        return dict(reading)

    def cpu_cores(self) -> int:
        return self.cores


def _clamp(name: str, value: float, low: float, high: float) -> float:
    if value < low or value > high:
        clamped = min(max(value, low), high)
        logger.warning(f"Probe value {name}={value} out of range, clamped to {clamped}")
        return clamped
    return value


def sample_now(probe, clock=None) -> ResourceSample:
    """Take one reading from the probe and clamp it into range."""
    clock = clock or SystemClock()
    try:
        reading = probe.read()
        cpu = float(reading["cpu_pct"])
        mem_used = float(reading["mem_used_pct"])
        mem_available = float(reading["mem_available_mb"])
    except Exception as e:
        raise ProbeUnavailable(f"Resource probe failed: {e}") from e
    if any(math.isnan(v) for v in (cpu, mem_used, mem_available)):
        raise ProbeUnavailable("Resource probe returned NaN")

    return ResourceSample(
        timestamp=clock.now(),
        cpu_pct=_clamp("cpu_pct", cpu, 0.0, 100.0),
        mem_used_pct=_clamp("mem_used_pct", mem_used, 0.0, 100.0),
        mem_available_mb=_clamp("mem_available_mb", mem_available, 0.0, math.inf),
    )


def window_key(minutes) -> str:
    return f"{minutes:g}m"


def _bounded_mean(values: List[float]) -> float:
    mean = sum(values) / len(values)
    return min(max(mean, min(values)), max(values))


def windowed_summary(
    samples: Iterable[ResourceSample],
    now: datetime,
    windows: Sequence = (1, 5, 10, 30),
    cpu_cores: int = 1,
) -> ResourceSummary:
    """
    Average CPU and memory over each trailing window ending at now.

    A window holding no samples reports the all-time mean and is listed in
    stale_windows.
    """
    samples = list(samples)
    if not samples:
        raise EmptySeries("Cannot summarize an empty sample series")

    cpu_avg: Dict[str, float] = {}
    mem_avg: Dict[str, float] = {}
    stale: List[str] = []
    for minutes in windows:
        key = window_key(minutes)
        cutoff = now - timedelta(minutes=minutes)
        selected = [s for s in samples if s.timestamp >= cutoff]
        if not selected:
            selected = samples
            stale.append(key)
        cpu_avg[key] = _bounded_mean([s.cpu_pct for s in selected])
        mem_avg[key] = _bounded_mean([s.mem_used_pct for s in selected])

    return ResourceSummary(
        timestamp=now,
        cpu_cores=cpu_cores,
        mem_available_mb=samples[-1].mem_available_mb,
        cpu_avg_pct=cpu_avg,
        mem_avg_pct=mem_avg,
        stale_windows=stale,
    )


def write_summary(summary: ResourceSummary, path) -> Path:
    """Atomically write the summary file."""
    return write_json(path, summary.to_dict())


def read_summary(path) -> ResourceSummary:
    data = read_json(path)
    try:
        return ResourceSummary.from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedJson(f"{path}: not a resource summary ({e})") from e


def run_average(values: Sequence[float], model_id: str = "", step: str = "", run_id: int = 0, prop: str = CPU) -> RunAggregate:
    """Mean of one run's samples for a fixed (model, step, run, property)."""
    values = list(values)
    if not values:
        raise EmptySeries(f"No samples for run {run_id} step {step} {prop}")
    return RunAggregate(
        model_id=model_id,
        step=step,
        run_id=run_id,
        prop=prop,
        sample_count=len(values),
        mean=_bounded_mean(values),
    )


def cross_run_utilization(aggregates: Sequence[RunAggregate]) -> float:
    """Mean of per-run means; every aggregate must share (model, step, property)."""
    aggregates = list(aggregates)
    if not aggregates:
        raise EmptyRuns("No run aggregates to combine")
    keys = {a.key for a in aggregates}
    if len(keys) > 1:
        raise MixedKey(f"Aggregates mix keys: {sorted(keys)}")
    return _bounded_mean([a.mean for a in aggregates])


def group_utilization(aggregates: Iterable[RunAggregate]) -> Dict[Tuple[str, str, str], float]:
    """Utilization per (model, step, property) over all given runs."""
    groups: Dict[Tuple[str, str, str], List[RunAggregate]] = {}
    for aggregate in aggregates:
        groups.setdefault(aggregate.key, []).append(aggregate)
    return {key: cross_run_utilization(items) for key, items in groups.items()}


class ResourceMonitor:
    """
    Sole writer of the sample buffer and the summary file.

    Samples are taken by a background thread (start/stop) and synchronously
    at step markers and on summary() requests.
    """

    def __init__(
        self,
        probe=None,
        clock=None,
        interval_s: float = 5.0,
        windows: Sequence = (1, 5, 10, 30),
        summary_path=None,
        model_id: str = "",
    ):
        self.logger = logging.getLogger(__name__)
        self.probe = probe or PsutilProbe()
        self.clock = clock or SystemClock()
        self.interval_s = interval_s
        self.windows = tuple(windows)
        self.summary_path = Path(summary_path) if summary_path else None
        self.model_id = model_id

        capacity = max(1, math.ceil(max(self.windows) * 60 / interval_s))
        self._buffer: deque = deque(maxlen=capacity)
        self._lock = threading.Lock()
        self._open_steps: Dict[Tuple[int, str], List[ResourceSample]] = {}
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self.failures = 0

    @property
    def capacity(self) -> int:
        return self._buffer.maxlen

    def sample(self) -> ResourceSample:
        sample = sample_now(self.probe, self.clock)
        with self._lock:
            if self._buffer and sample.timestamp <= self._buffer[-1].timestamp:
                sample = ResourceSample(
                    timestamp=self._buffer[-1].timestamp + timedelta(microseconds=1),
                    cpu_pct=sample.cpu_pct,
                    mem_used_pct=sample.mem_used_pct,
                    mem_available_mb=sample.mem_available_mb,
                )
            self._buffer.append(sample)
            for collected in self._open_steps.values():
                collected.append(sample)
        return sample

    def snapshot(self) -> List[ResourceSample]:
        with self._lock:
            return list(self._buffer)

    def summary(self, fresh: bool = True) -> ResourceSummary:
        """Summary over the buffer; a fresh sample is taken first by default."""
        if fresh or not self._buffer:
            latest = self.sample()
            now = latest.timestamp
        else:
            now = self.snapshot()[-1].timestamp
        return windowed_summary(self.snapshot(), now, self.windows, self.probe.cpu_cores())

    def publish(self) -> Optional[ResourceSummary]:
        summary = self.summary()
        if self.summary_path:
            write_summary(summary, self.summary_path)
        return summary

    def begin_step(self, run_id: int, step: str) -> None:
        with self._lock:
            self._open_steps[(run_id, step)] = []
        self._safe_sample()

    def end_step(self, run_id: int, step: str) -> List[RunAggregate]:
        """Close a step marker and return its CPU and memory aggregates."""
        self._safe_sample()
        with self._lock:
            collected = self._open_steps.pop((run_id, step), [])
        if not collected:
            return []
        return [
            run_average([s.cpu_pct for s in collected], self.model_id, step, run_id, CPU),
            run_average([s.mem_used_pct for s in collected], self.model_id, step, run_id, MEMORY),
        ]

    def _safe_sample(self) -> Optional[ResourceSample]:
        try:
            return self.sample()
        except ProbeUnavailable as e:
            self.failures += 1
            self.logger.warning(f"Resource sample skipped: {e}")
            return None

    def _loop(self):
        while not self._stop.is_set():
            try:
                self.publish()
            except ProbeUnavailable as e:
                self.failures += 1
                self.logger.warning(f"Resource sample skipped: {e}")
            except Exception as e:
                self.failures += 1
                self.logger.error(f"Failed to publish resource summary: {e}")
            self._stop.wait(self.interval_s)

    def start(self):
        if self._thread and self._thread.is_alive():
            return
        self._stop.clear()
        self._thread = threading.Thread(target=self._loop, name="lei-resource-monitor", daemon=True)
        self._thread.start()
        self.logger.info(f"Resource monitor started (every {self.interval_s}s, buffer {self.capacity} samples)")

    def stop(self, timeout: float = 5.0):
        self._stop.set()
        if self._thread:
            self._thread.join(timeout)
            self._thread = None

    @property
    def running(self) -> bool:
        return bool(self._thread and self._thread.is_alive())
