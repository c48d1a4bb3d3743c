"""Token bucket driven by an external (virtual or wall) clock."""

from __future__ import annotations

import threading
from dataclasses import dataclass


@dataclass
class TokenBucket:
    capacity: float
    refill_rate: float  # tokens per second
    level: float | None = None
    updated_at: float | None = None

    def __post_init__(self) -> None:
        if self.capacity <= 0 or self.refill_rate < 0:
            raise ValueError("capacity must be > 0 and refill_rate >= 0")
        if self.level is None:
            self.level = float(self.capacity)
        self._lock = threading.Lock()

    def _refill(self, now: float) -> None:
        if self.updated_at is None:
            self.updated_at = now
            return
        elapsed = max(0.0, now - self.updated_at)
        self.level = min(self.capacity, self.level + elapsed * self.refill_rate)
        self.updated_at = max(self.updated_at, now)

    def try_consume(self, now: float, n: float = 1.0) -> bool:
        with self._lock:
            self._refill(now)
            if self.level + 1e-9 >= n:
                self.level = max(0.0, self.level - n)
                return True
            return False

    def peek(self, now: float) -> float:
        with self._lock:
            self._refill(now)
            return self.level
