"""
Client for the remote LLM backend.
Sends one instruction at a time, enforces the call timeout by abandoning the
pending request, and records usage metrics for every exchange.
"""

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import requests

from artifacts import append_jsonl
from clock import SystemClock
from config import LlmBackendConfig
from errors import FixtureMiss, MalformedJson, MissingFile

logger = logging.getLogger(__name__)

OK = "ok"
TIMEOUT = "timeout"
TRANSPORT_ERROR = "transport_error"
FIXTURE_MISS = "fixture_miss"

# Recorded against the task or script a failed call served
FAILURE_REASONS = {TIMEOUT: "llm_timeout", TRANSPORT_ERROR: "llm_transport_error", FIXTURE_MISS: "llm_fixture_miss"}

GENERATE_PATH = "/api/generate"


def _non_negative_int(value: Any) -> int:
    try:
        return max(0, int(value))
    except (TypeError, ValueError):
        return 0


@dataclass(frozen=True)
class LlmUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    load_duration_ns: int = 0
    prompt_eval_duration_ns: int = 0
    eval_duration_ns: int = 0
    total_duration_ns: int = 0
    prompt_eval_count: int = 0
    eval_count: int = 0
    # False when the backend sent no token counts and zeros were filled in
    counts_reported: bool = True

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    @classmethod
    def from_response(cls, data: Dict[str, Any]) -> "LlmUsage":
        """
        Build usage from a backend response body. Accepts the inference
        server's native names (prompt_eval_count, eval_duration, ...) and an
        optional nested "usage" object with prompt/completion token counts.
        """
        data = data or {}
        nested = data.get("usage") if isinstance(data.get("usage"), dict) else {}

        def pick(*names):
            for source in (data, nested):
                for name in names:
                    if source.get(name) is not None:
                        return source[name]
            return None

        prompt = pick("prompt_tokens", "prompt_eval_count")
        completion = pick("completion_tokens", "eval_count")
        return cls(
            prompt_tokens=_non_negative_int(prompt),
            completion_tokens=_non_negative_int(completion),
            load_duration_ns=_non_negative_int(pick("load_duration_ns", "load_duration")),
            prompt_eval_duration_ns=_non_negative_int(pick("prompt_eval_duration_ns", "prompt_eval_duration")),
            eval_duration_ns=_non_negative_int(pick("eval_duration_ns", "eval_duration")),
            total_duration_ns=_non_negative_int(pick("total_duration_ns", "total_duration")),
            prompt_eval_count=_non_negative_int(pick("prompt_eval_count")),
            eval_count=_non_negative_int(pick("eval_count")),
            counts_reported=prompt is not None or completion is not None,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
            "load_duration_ns": self.load_duration_ns,
            "prompt_eval_duration_ns": self.prompt_eval_duration_ns,
            "eval_duration_ns": self.eval_duration_ns,
            "total_duration_ns": self.total_duration_ns,
            "prompt_eval_count": self.prompt_eval_count,
            "eval_count": self.eval_count,
            "counts_reported": self.counts_reported,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LlmUsage":
        usage = cls.from_response(data)
        if "counts_reported" in data:
            usage = replace(usage, counts_reported=bool(data["counts_reported"]))
        return usage


@dataclass(frozen=True)
class LlmCall:
    """Identifies one LLM call within a run."""

    run_id: Optional[int] = None
    step: str = "task_gen"
    key: Optional[str] = None
    attempt: int = 0


@dataclass
class LlmExchange:
    instruction: str
    response: Optional[str]
    usage: Optional[LlmUsage]
    wall_duration_s: float
    outcome: str
    call: LlmCall = field(default_factory=LlmCall)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.outcome == OK

    @property
    def failure_reason(self) -> Optional[str]:
        if self.ok:
            return None
        return FAILURE_REASONS.get(self.outcome, FAILURE_REASONS[TRANSPORT_ERROR])


def instruction_hash(instruction: str) -> str:
    return hashlib.sha256(instruction.encode("utf-8")).hexdigest()


class HttpBackend:
    """POSTs instructions to {base_url}/api/generate (non-streaming)."""

    def __init__(self, config: LlmBackendConfig, session: Optional[requests.Session] = None):
        self.config = config
        self.session = session or requests.Session()
        self.url = config.base_url.rstrip("/") + GENERATE_PATH

    def generate(self, instruction: str, call: LlmCall, timeout_s: Optional[float] = None) -> Tuple[str, LlmUsage]:
        payload = {"model": self.config.model_id, "prompt": instruction, "stream": False}
        response = self.session.post(self.url, json=payload, timeout=timeout_s)
        response.raise_for_status()
        data = response.json()
        text = data.get("response")
        if text is None:
            raise ValueError("Backend response has no 'response' field")
        return text, LlmUsage.from_response(data)


class FixtureBackend:
    """
    Deterministic backend replaying canned responses.

    manifest.json holds a list of entries (or {"entries": [...]}) of the form
    {"run"?, "step", "key"?, "attempt"?, "file" | "text", "usage"?, "stall_s"?}.
    An entry with a matching "run" wins over one without.
    """

    def __init__(self, fixture_dir):
        self.fixture_dir = Path(fixture_dir)
        manifest_path = self.fixture_dir / "manifest.json"
        if not manifest_path.is_file():
            raise MissingFile(manifest_path)
        try:
            raw = json.loads(manifest_path.read_text(encoding="utf-8"))
        except ValueError as e:
            raise MalformedJson(f"{manifest_path}: {e}")
        entries = raw.get("entries", []) if isinstance(raw, dict) else raw
        if not isinstance(entries, list):
            raise MalformedJson(f"{manifest_path}: expected a list of entries")

        self.entries: Dict[Tuple, Dict[str, Any]] = {}
        for entry in entries:
            self.entries[self._key(entry.get("run"), entry["step"], entry.get("key"), entry.get("attempt", 0))] = entry
        self.calls: List[LlmCall] = []
        self._lock = threading.Lock()

    @staticmethod
    def _key(run, step, key, attempt) -> Tuple:
        return (
            int(run) if run is not None else None,
            step,
            str(key) if key is not None else None,
            int(attempt or 0),
        )

    def lookup(self, call: LlmCall) -> Dict[str, Any]:
        exact = self._key(call.run_id, call.step, call.key, call.attempt)
        shared = self._key(None, call.step, call.key, call.attempt)
        entry = self.entries.get(exact) or self.entries.get(shared)
        if entry is None:
            raise FixtureMiss(
                f"No fixture for run={call.run_id} step={call.step} key={call.key} attempt={call.attempt}"
            )
        return entry

    def generate(self, instruction: str, call: LlmCall, timeout_s: Optional[float] = None) -> Tuple[str, LlmUsage]:
        with self._lock:
            self.calls.append(call)
        entry = self.lookup(call)
        if entry.get("stall_s"):
            time.sleep(float(entry["stall_s"]))
        if "text" in entry:
            text = entry["text"]
        else:
            path = self.fixture_dir / entry["file"]
            if not path.is_file():
                raise FixtureMiss(f"Fixture response file missing: {path}")
            text = path.read_text(encoding="utf-8")
        return text, LlmUsage.from_dict(entry.get("usage", {}))

    def count(self, step: str, key: Optional[str] = None) -> int:
        return sum(1 for c in self.calls if c.step == step and (key is None or c.key == key))


def fixture_backend(fixture_dir) -> FixtureBackend:
    return FixtureBackend(fixture_dir)


def build_backend(config: LlmBackendConfig):
    if config.mode == "fixture":
        return fixture_backend(config.fixture_dir)
    return HttpBackend(config)


def invoke(backend, instruction: str, timeout_s: float, call: Optional[LlmCall] = None, clock=None) -> LlmExchange:
    """
    Send one instruction and wait at most timeout_s for the answer.

    Failed calls are reported in the exchange outcome, never raised.
    A timed-out request is abandoned, not cancelled.
    """
    if not instruction:
        raise ValueError("Instruction must not be empty")
    clock = clock or SystemClock()
    call = call or LlmCall()
    result: Dict[str, Any] = {}

    def worker():
        try:
            result["value"] = backend.generate(instruction, call, timeout_s)
        except Exception as e:
            result["error"] = e

    started = clock.monotonic()
    thread = threading.Thread(target=worker, name=f"lei-llm-{call.step}", daemon=True)
    thread.start()
    thread.join(timeout_s)
    elapsed = max(0.0, clock.monotonic() - started)

    if thread.is_alive():
        logger.warning(f"LLM call {call.step}/{call.key} timed out after {timeout_s}s; request abandoned")
        return LlmExchange(instruction, None, None, max(elapsed, timeout_s), TIMEOUT, call, f"Timed out after {timeout_s}s")

    if "error" in result:
        error = result["error"]
        message = f"{type(error).__name__}: {error}"
        if isinstance(error, FixtureMiss):
            logger.error(message)
            return LlmExchange(instruction, None, None, elapsed, FIXTURE_MISS, call, message)
        logger.warning(f"LLM call {call.step}/{call.key} failed: {message}")
        return LlmExchange(instruction, None, None, elapsed, TRANSPORT_ERROR, call, message)

    text, usage = result["value"]
    return LlmExchange(instruction, text, usage, elapsed, OK, call)


class LlmClient:
    """Shared client handle: invokes the backend and appends every exchange to the log."""

    def __init__(self, backend, timeout_s: float, clock=None, exchange_log=None, model_id: str = ""):
        self.logger = logging.getLogger(__name__)
        self.backend = backend
        self.timeout_s = timeout_s
        self.clock = clock or SystemClock()
        self.exchange_log = Path(exchange_log) if exchange_log else None
        self.model_id = model_id
        self.exchanges = 0

    def complete(self, instruction: str, call: LlmCall) -> LlmExchange:
        exchange = invoke(self.backend, instruction, self.timeout_s, call, self.clock)
        self.exchanges += 1
        self.logger.info(
            f"LLM {call.step} key={call.key} attempt={call.attempt}: {exchange.outcome} "
            f"in {exchange.wall_duration_s:.2f}s"
        )
        if self.exchange_log:
            append_jsonl(self.exchange_log, exchange_record(exchange, self.model_id, self.clock.now()))
        return exchange


def exchange_record(exchange: LlmExchange, model_id: str, timestamp) -> Dict[str, Any]:
    call = exchange.call
    return {
        "timestamp": timestamp.isoformat(),
        "run_id": call.run_id,
        "step": call.step,
        "key": call.key,
        "attempt": call.attempt,
        "model_id": model_id,
        "instruction_sha256": instruction_hash(exchange.instruction),
        "outcome": exchange.outcome,
        "usage": exchange.usage.to_dict() if exchange.usage else None,
        "wall_duration_s": exchange.wall_duration_s,
        "error": exchange.error,
    }
