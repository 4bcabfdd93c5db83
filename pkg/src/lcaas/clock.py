"""Millisecond clocks shared by the service, the anchor backend and the load generator."""

from __future__ import annotations

import threading
import time


class WallClock:
    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000

    def sleep_until(self, t_ms: int) -> None:
        delay = t_ms - self.now_ms()
        if delay > 0:
            time.sleep(delay / 1000)


class SimClock:
    """Virtual clock; time only moves when someone calls :meth:`advance_to`."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        return self._now

    def advance_to(self, t_ms: int) -> None:
        with self._lock:
            if t_ms < self._now:
                raise ValueError(f"simulated clock cannot go back ({t_ms} < {self._now})")
            self._now = t_ms

    def advance(self, delta_ms: int) -> None:
        self.advance_to(self._now + delta_ms)

    sleep_until = advance_to


def make_clock(mode: str, start_ms: int = 0):
    if mode == "wall":
        return WallClock()
    if mode in ("sim", "simulated"):
        return SimClock(start_ms)
    raise ValueError(f"unknown clock mode {mode!r}")
