"""
Domain bundle loading and raw data collection.
Reads the files a prompt is built from, polls the external data source into
the append-only raw store, and cuts recent samples out of it.
"""

import csv
import io
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import requests

from artifacts import atomic_write_text
from clock import SystemClock, parse_timestamp
from config import AppConfig, DomainPaths, PipelineConfig
from errors import (
    EmptyStore,
    HttpError,
    InvariantViolation,
    LeiError,
    MalformedCsv,
    MalformedJson,
    MissingFile,
    SchemaMismatch,
)
from models import TaskSpec

logger = logging.getLogger(__name__)

TIMESTAMP_COLUMN = "timestamp"
HTTP_TIMEOUT_S = 30


@dataclass
class DomainBundle:
    sample_data: str
    header: List[str]
    rows: List[List[str]]
    metadata_text: str
    metadata: Dict[str, Any]
    context: str
    previous_tasks: List[TaskSpec] = field(default_factory=list)

    @property
    def previous_tasks_json(self) -> str:
        return json.dumps([t.to_dict() for t in self.previous_tasks], indent=2, ensure_ascii=False)


@dataclass(frozen=True)
class SourceSpec:
    url: str
    latitude: float
    longitude: float
    interval_s: float
    columns: Dict[str, str]
    timestamp_path: Optional[str] = None
    api_key_param: Optional[str] = None
    params: Dict[str, str] = field(default_factory=dict)

    def request_url(self) -> str:
        """Fill {lat} and {lon} into the URL template."""
        try:
            return self.url.format(lat=self.latitude, lon=self.longitude)
        except (KeyError, IndexError, ValueError, AttributeError) as e:
            raise HttpError(f"Bad source URL template {self.url!r}: {type(e).__name__}: {e}")


def _read_text(path: Path) -> str:
    if not path.is_file():
        raise MissingFile(path)
    try:
        return path.read_text(encoding="utf-8").replace("\r\n", "\n")
    except OSError as e:
        raise MissingFile(path, f"Cannot read {path}: {e}")


def parse_csv_table(text: str, source: str = "sample_data.csv"):
    """Parse CSV text into (header, rows); first column must hold timestamps."""
    try:
        table = [row for row in csv.reader(io.StringIO(text)) if row]
    except csv.Error as e:
        raise MalformedCsv(f"{source}: {e}")
    if not table:
        raise MalformedCsv(f"{source}: no header row")
    header, rows = table[0], table[1:]
    if not rows:
        raise MalformedCsv(f"{source}: header present but no data rows")
    for index, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise MalformedCsv(f"{source}: row {index} has {len(row)} fields, expected {len(header)}")
        try:
            parse_timestamp(row[0])
        except ValueError:
            raise MalformedCsv(f"{source}: row {index} first column is not a timestamp: {row[0]!r}")
    return header, rows


def load_task_list(path: Path) -> List[TaskSpec]:
    """Load a tasks JSON array; an absent file is an empty list."""
    if not path.is_file():
        return []
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as e:
        raise MalformedJson(f"{path}: {e}")
    if not isinstance(data, list):
        raise MalformedJson(f"{path}: expected a JSON array of tasks")
    try:
        return [TaskSpec.from_dict(item) for item in data]
    except (KeyError, TypeError) as e:
        raise MalformedJson(f"{path}: invalid task entry ({e})")


def load_domain_bundle(paths: DomainPaths) -> DomainBundle:
    """Load sample data, metadata, context and task history for one domain."""
    sample_text = _read_text(paths.sample)
    metadata_text = _read_text(paths.metadata)
    context = _read_text(paths.context)

    header, rows = parse_csv_table(sample_text, source=str(paths.sample))

    try:
        metadata = json.loads(metadata_text)
    except ValueError as e:
        raise MalformedJson(f"{paths.metadata}: {e}")
    if not isinstance(metadata, dict):
        raise MalformedJson(f"{paths.metadata}: expected a JSON object")

    if not context.strip():
        raise InvariantViolation("context", f"{paths.context} is empty")

    previous = load_task_list(paths.tasks_list) if paths.tasks_list_present else []
    logger.info(
        f"Loaded domain bundle from {paths.domain_dir}: {len(rows)} sample rows, "
        f"{len(previous)} previous tasks"
    )
    return DomainBundle(
        sample_data=sample_text.strip() + "\n",
        header=header,
        rows=rows,
        metadata_text=metadata_text.strip(),
        metadata=metadata,
        context=context.strip(),
        previous_tasks=previous,
    )


def load_source_spec(path) -> SourceSpec:
    """Load a data source description (source.json)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as e:
        raise MalformedJson(f"{path}: {e}")
    try:
        spec = SourceSpec(
            url=data["url"],
            latitude=float(data.get("latitude", 0.0)),
            longitude=float(data.get("longitude", 0.0)),
            interval_s=float(data.get("interval_s", 600)),
            columns=dict(data["columns"]),
            timestamp_path=data.get("timestamp_path"),
            api_key_param=data.get("api_key_param"),
            params={k: str(v) for k, v in data.get("params", {}).items()},
        )
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedJson(f"{path}: invalid source description ({e})")
    if spec.interval_s <= 0:
        raise InvariantViolation("interval_s", "Source poll interval must be > 0")
    if not spec.columns:
        raise InvariantViolation("columns", "Source column mapping must not be empty")
    try:
        spec.request_url()
    except HttpError as e:
        raise InvariantViolation("url", str(e))
    return spec


def resolve_path(payload: Any, dotted: str) -> Any:
    """Follow a dotted path (list indices allowed) into a JSON payload."""
    current = payload
    for part in dotted.split("."):
        if isinstance(current, list):
            try:
                current = current[int(part)]
            except (ValueError, IndexError):
                raise KeyError(dotted)
        elif isinstance(current, dict):
            if part not in current:
                raise KeyError(dotted)
            current = current[part]
        else:
            raise KeyError(dotted)
    return current


class HttpFetcher:
    """Fetches source payloads over HTTP GET."""

    def __init__(self, session: Optional[requests.Session] = None, timeout_s: float = HTTP_TIMEOUT_S):
        self.session = session or requests.Session()
        self.timeout_s = timeout_s

    def __call__(self, spec: SourceSpec) -> Any:
        params = dict(spec.params)
        if spec.api_key_param and AppConfig.SOURCE_API_KEY:
            params[spec.api_key_param] = AppConfig.SOURCE_API_KEY
        try:
            response = self.session.get(spec.request_url(), params=params, timeout=self.timeout_s)
            response.raise_for_status()
            return response.json()
        except requests.RequestException as e:
            raise HttpError(f"Source request failed: {e}")
        except ValueError as e:
            raise HttpError(f"Source returned invalid JSON: {e}")


class FixtureFetcher:
    """Replays numbered payload files (payload_0001.json, ...) in order."""

    def __init__(self, payload_dir):
        self.payload_dir = Path(payload_dir)
        self.files = sorted(self.payload_dir.glob("payload_*.json"))
        self.position = 0

    def __call__(self, spec: SourceSpec) -> Any:
        if self.position >= len(self.files):
            raise HttpError(f"No more recorded payloads in {self.payload_dir}")
        path = self.files[self.position]
        self.position += 1
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except ValueError as e:
            raise HttpError(f"Recorded payload {path.name} is not JSON: {e}")


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if value is None:
        return ""
    return str(value)


def _row_timestamp(spec: SourceSpec, payload: Any, clock) -> datetime:
    if not spec.timestamp_path:
        return clock.now()
    try:
        raw = resolve_path(payload, spec.timestamp_path)
    except KeyError:
        raise SchemaMismatch(f"Timestamp field '{spec.timestamp_path}' missing from payload")
    if isinstance(raw, (int, float)):
        return datetime.fromtimestamp(raw, tz=timezone.utc)
    try:
        return parse_timestamp(str(raw))
    except ValueError:
        raise SchemaMismatch(f"Timestamp field '{spec.timestamp_path}' is not a timestamp: {raw!r}")


def _csv_line(values: List[str]) -> str:
    buffer = io.StringIO()
    csv.writer(buffer, lineterminator="\n").writerow(values)
    return buffer.getvalue()


def poll_source(
    spec: SourceSpec,
    raw_store,
    clock=None,
    fetch: Optional[Callable[[SourceSpec], Any]] = None,
) -> int:
    """
    Poll the source once and append exactly one row to the raw store.

    Returns:
        Number of rows appended (always 1 on success)

    Raises:
        HttpError: source unreachable or returned garbage
        SchemaMismatch: a mapped field is absent; nothing is written
    """
    clock = clock or SystemClock()
    fetch = fetch or HttpFetcher()
    raw_store = Path(raw_store)

    payload = fetch(spec)
    values = []
    for column, dotted in spec.columns.items():
        try:
            values.append(_format_value(resolve_path(payload, dotted)))
        except KeyError:
            raise SchemaMismatch(f"Mapped field '{dotted}' for column '{column}' missing from payload")
    timestamp = _row_timestamp(spec, payload, clock)

    header = [TIMESTAMP_COLUMN] + list(spec.columns)
    chunk = ""
    if raw_store.exists() and raw_store.stat().st_size > 0:
        with open(raw_store, "rb") as handle:
            first_line = handle.readline().decode("utf-8").rstrip("\r\n")
            handle.seek(-1, os.SEEK_END)
            ends_with_newline = handle.read(1) == b"\n"
        existing_header = next(csv.reader([first_line]), [])
        if existing_header != header:
            raise SchemaMismatch(
                f"Raw store header {existing_header} does not match source columns {header}"
            )
        if not ends_with_newline:
            chunk = "\n"
    else:
        raw_store.parent.mkdir(parents=True, exist_ok=True)
        chunk = _csv_line(header)

    chunk += _csv_line([timestamp.isoformat()] + values)
    with open(raw_store, "a", encoding="utf-8", newline="") as handle:
        handle.write(chunk)
    logger.debug(f"Appended 1 row to {raw_store}")
    return 1


def extract_sample(raw_store, window: Union[float, timedelta]) -> str:
    """
    Return the header plus every row whose timestamp is at or after
    (latest - window). Rows are a contiguous suffix of the store.
    """
    raw_store = Path(raw_store)
    if not raw_store.is_file():
        raise EmptyStore(f"Raw store {raw_store} does not exist")
    if not isinstance(window, timedelta):
        window = timedelta(seconds=float(window))

    text = raw_store.read_text(encoding="utf-8")
    table = [row for row in csv.reader(io.StringIO(text)) if row]
    if len(table) < 2:
        raise EmptyStore(f"Raw store {raw_store} has no data rows")
    header, rows = table[0], table[1:]

    try:
        latest = parse_timestamp(rows[-1][0])
        cutoff = latest - window
        start = len(rows) - 1
        while start > 0 and parse_timestamp(rows[start - 1][0]) >= cutoff:
            start -= 1
    except ValueError as e:
        raise MalformedCsv(f"{raw_store}: bad timestamp ({e})")

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows[start:])
    return buffer.getvalue()


def refresh_sample(paths: DomainPaths, window_min: float) -> int:
    """Rewrite sample_data.csv from the raw store; returns the data row count."""
    sample = extract_sample(paths.raw_data, timedelta(minutes=window_min))
    atomic_write_text(paths.sample, sample)
    rows = sample.count("\n") - 1
    logger.info(f"Refreshed {paths.sample} with {rows} rows from {paths.raw_data}")
    return rows


class SourcePoller:
    """Background thread that polls the data source on a fixed interval."""

    def __init__(self, spec: SourceSpec, raw_store, clock=None, fetch=None, interval_s: Optional[float] = None):
        self.logger = logging.getLogger(__name__)
        self.spec = spec
        self.raw_store = Path(raw_store)
        self.clock = clock or SystemClock()
        self.fetch = fetch or HttpFetcher()
        self.interval_s = interval_s or spec.interval_s

        self.polls = 0
        self.rows_appended = 0
        self.failures = 0
        self.last_error: Optional[str] = None
        self.last_poll_at: Optional[datetime] = None

        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def poll_once(self) -> bool:
        """Run a single poll; failures are counted, never raised."""
        self.polls += 1
        self.last_poll_at = self.clock.now()
        try:
            self.rows_appended += poll_source(self.spec, self.raw_store, self.clock, self.fetch)
            self.last_error = None
            return True
        except LeiError as e:
            self.failures += 1
            self.last_error = str(e)
            self.logger.warning(f"Poll failed ({self.failures} failures so far): {e}")
            return False
        except Exception as e:
            self.failures += 1
            self.last_error = str(e)
            self.logger.error(f"Unexpected error while polling source: {e}")
            return False

    def _loop(self):
        while not self._stop.is_set():
            self.poll_once()
            self._stop.wait(self.interval_s)

    def start(self):
        if self._thread and self._thread.is_alive():
            return
        self._stop.clear()
        self._thread = threading.Thread(target=self._loop, name="lei-source-poller", daemon=True)
        self._thread.start()
        self.logger.info(f"Source poller started (every {self.interval_s:.0f}s -> {self.raw_store})")

    def stop(self, timeout: float = 5.0):
        self._stop.set()
        if self._thread:
            self._thread.join(timeout)
            self._thread = None

    def status(self) -> Dict[str, Any]:
        return {
            "running": bool(self._thread and self._thread.is_alive()),
            "polls": self.polls,
            "rows_appended": self.rows_appended,
            "failures": self.failures,
            "last_error": self.last_error,
            "last_poll_at": self.last_poll_at.isoformat() if self.last_poll_at else None,
        }


def build_source_poller(cfg: PipelineConfig, paths: DomainPaths, clock=None, payload_dir=None) -> SourcePoller:
    """
    Poller for the configured domain, polling every cfg.poll_interval_s.
    In fixture mode the recorded payloads are replayed when present.
    """
    spec = load_source_spec(paths.source)
    if payload_dir is None and cfg.backend.mode == "fixture":
        recorded = Path(cfg.backend.fixture_dir) / "payloads"
        if recorded.is_dir():
            payload_dir = recorded
    fetch = FixtureFetcher(payload_dir) if payload_dir else HttpFetcher()
    return SourcePoller(spec, paths.raw_data, clock, fetch, cfg.poll_interval_s)
