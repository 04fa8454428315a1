"""Clock abstraction so mock runs can be replayed byte-for-byte.

Every component that stamps or times something reads the engine's clock.
The wall clock is the default; the simulated clock advances by a fixed
tick per reading, which makes latencies, durations and timestamps a pure
function of the call sequence.
"""

from __future__ import annotations

import time
from datetime import datetime, timedelta, timezone


class WallClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)

    def ticks(self) -> float:
        """Monotonic seconds, high resolution. Use for durations."""
        return time.perf_counter()


class SimulatedClock:
    """Deterministic clock: each reading advances time by one tick."""

    def __init__(self, start: datetime | None = None, tick_seconds: float = 0.001):
        self._t = 0.0
        self._tick = tick_seconds
        self._start = start or datetime(2025, 1, 1, tzinfo=timezone.utc)

    def now(self) -> datetime:
        self._t += self._tick
        return self._start + timedelta(seconds=self._t)

    def ticks(self) -> float:
        self._t += self._tick
        return self._t
