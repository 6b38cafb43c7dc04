"""Staged task difficulty driven by a rolling success rate.

The schedule starts every run at the easiest stage and moves one stage up
whenever more than 80% of the last 1000 finished episodes succeeded. The
window clears on each advance so the new stage earns its own record, and
the stage never moves back down. Stage flags only affect episodes reset
after the change; running episodes keep the flags they started with.
"""

from __future__ import annotations

import numpy as np


class Curriculum:
    def __init__(self, n_levels: int, window: int = 1000, threshold: float = 0.8):
        if n_levels < 1:
            raise ValueError("need at least one level")
        self.n_levels = n_levels
        self.window = window
        self.threshold = threshold
        self.level = 0
        self._ring = np.zeros(window, dtype=np.bool_)
        self._head = 0
        self._count = 0

    @property
    def success_rate(self) -> float:
        if self._count == 0:
            return 0.0
        return float(self._ring[: self._count].mean()) if self._count < self.window \
            else float(self._ring.mean())

    def record(self, successes) -> int:
        """Fold in finished episodes (bool per episode); returns the level."""
        for s in np.asarray(successes, dtype=np.bool_).ravel():
            self._ring[self._head] = s
            self._head = (self._head + 1) % self.window
            self._count += 1
            if (
                self._count >= self.window
                and self.level < self.n_levels - 1
                and self._ring.mean() > self.threshold
            ):
                self.level += 1
                self._head = 0
                self._count = 0
        return self.level

    def state_dict(self) -> dict:
        return {
            "level": self.level,
            "ring": self._ring.copy(),
            "head": self._head,
            "count": min(self._count, self.window),
        }

    def load_state_dict(self, d) -> None:
        self.level = int(d["level"])
        self._ring[:] = np.asarray(d["ring"], dtype=np.bool_)
        self._head = int(d["head"])
        self._count = int(d["count"])
