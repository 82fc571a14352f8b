"""Platform clocks.

Everything time-dependent takes a clock so scenarios replay deterministically
under virtual time while the service mode runs against the wall clock.
"""

from __future__ import annotations

import time


class Clock:
    def now_ms(self) -> int:
        raise NotImplementedError


class RealClock(Clock):
    def now_ms(self) -> int:
        return int(time.time() * 1000)


class VirtualClock(Clock):
    """Manually advanced clock; never moves backwards."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms

    def now_ms(self) -> int:
        return self._now

    def advance(self, delta_ms: int) -> int:
        if delta_ms < 0:
            raise ValueError("clock cannot move backwards")
        self._now += delta_ms
        return self._now

    def set(self, now_ms: int) -> int:
        if now_ms < self._now:
            raise ValueError("clock cannot move backwards")
        self._now = now_ms
        return self._now
