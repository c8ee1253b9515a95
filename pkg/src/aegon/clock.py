"""Controllable time source shared by the harness, the broker and simulated devices."""

from __future__ import annotations

import threading


class ManualClock:
    """Callable clock returning UTC seconds; only moves when told to."""

    def __init__(self, start: float = 1_780_000_000.0):
        self._now = float(start)
        self._lock = threading.Lock()

    def __call__(self) -> float:
        return self._now

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("clock cannot run backwards")
        with self._lock:
            self._now += seconds
            return self._now

    def set(self, when: float) -> None:
        with self._lock:
            self._now = float(when)

    sleep = advance
