"""Virtual time source used by every simulated component."""

from __future__ import annotations

import threading
import time


class VirtualClock:
    """Monotone simulated clock, in seconds since the Unix epoch.

    Only the harness advances it; components read ``now()``.
    """

    def __init__(self, start: float = 1_700_000_000.0) -> None:
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("cannot move a virtual clock backwards")
        with self._lock:
            self._now += seconds
            return self._now

    def advance_to(self, t: float) -> float:
        with self._lock:
            if t < self._now:
                raise ValueError(f"cannot move a virtual clock backwards ({t} < {self._now})")
            self._now = float(t)
            return self._now

    __call__ = now


def wall_clock() -> float:
    return time.time()
