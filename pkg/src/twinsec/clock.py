"""Clock abstraction.

Everything that stamps records (ledger blocks, rules, sessions) takes a
clock so that demos and tests can run on a logical clock and produce
byte-identical output across invocations.
"""

from __future__ import annotations

import time


class SystemClock:
    """Wall-clock seconds."""

    def now(self) -> float:
        return time.time()


class LogicalClock:
    """Deterministic monotone clock: each call advances by a fixed step."""

    def __init__(self, start: float = 0.0, step: float = 1.0) -> None:
        self._t = float(start)
        self._step = float(step)

    def now(self) -> float:
        t = self._t
        self._t += self._step
        return t

    def peek(self) -> float:
        return self._t
