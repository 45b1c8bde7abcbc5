"""Injected clocks.

No homegate component reads wall time directly; everything takes a Clock so
tests and the simulator control time (certificate expiry, IDS windows, the
24 h silence rule) without sleeping.
"""

from __future__ import annotations

import time


class Clock:
    """Time source. Milliseconds since the unix epoch."""

    def now_ms(self) -> int:
        raise NotImplementedError

    def now_s(self) -> int:
        return self.now_ms() // 1000


class SystemClock(Clock):
    def now_ms(self) -> int:
        return int(time.time() * 1000)


class VirtualClock(Clock):
    """Settable clock for simulation and tests. Never goes backwards."""

    def __init__(self, start_ms: int = 0):
        self._now_ms = start_ms

    def now_ms(self) -> int:
        return self._now_ms

    def advance(self, delta_ms: int) -> None:
        if delta_ms < 0:
            raise ValueError("clock cannot go backwards")
        self._now_ms += delta_ms

    def set(self, now_ms: int) -> None:
        if now_ms < self._now_ms:
            raise ValueError("clock cannot go backwards")
        self._now_ms = now_ms
