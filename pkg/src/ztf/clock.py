"""Clock abstraction so every service can run on a simulated timeline."""

from __future__ import annotations

import threading
import time
from typing import Protocol


class Clock(Protocol):
    def now(self) -> float:
        """Seconds since epoch."""
        ...


class SystemClock:
    """Wall clock, for running services outside the harness."""

    def now(self) -> float:
        return time.time()


class SimulatedClock:
    """Manually advanced clock shared by all services in a harness run.

    Never moves backward; `advance` is the only mutation.
    """

    def __init__(self, start: float = 1619696843.0):
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("clock cannot move backward")
        with self._lock:
            self._now += seconds
            return self._now
