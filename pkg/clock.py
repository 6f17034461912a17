"""
Time sources. Every timestamp and duration in the pipeline comes from a clock
object so that fixture runs can be replayed byte-for-byte.
"""

import threading
import time
from datetime import datetime, timedelta, timezone


class SystemClock:
    """Wall clock in UTC plus the process monotonic counter."""

    def now(self) -> datetime:
        return datetime.now(timezone.utc)

    def monotonic(self) -> float:
        return time.monotonic()


class TickingClock:
    """
    Deterministic clock for tests and goldens.

    Every call to now() or monotonic() advances the clock by tick_s, so the
    same sequence of calls always observes the same values.
    """

    def __init__(self, start: datetime, tick_s: float = 0.01):
        if start.tzinfo is None:
            start = start.replace(tzinfo=timezone.utc)
        self._start = start
        self._tick = tick_s
        self._elapsed = 0.0
        self._lock = threading.Lock()

    def _advance(self) -> float:
        with self._lock:
            value = self._elapsed
            self._elapsed = round(self._elapsed + self._tick, 9)
            return value

    def now(self) -> datetime:
        return self._start + timedelta(seconds=self._advance())

    def monotonic(self) -> float:
        return self._advance()

    def advance(self, seconds: float) -> None:
        """Jump forward without consuming a tick."""
        with self._lock:
            self._elapsed = round(self._elapsed + seconds, 9)


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    parsed = datetime.fromisoformat(value.strip().replace("Z", "+00:00"))
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed
