"""Small value types shared across modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, order=True)
class LatticePath:
    """A trajectory ``t -> positions[t - start_time]`` on consecutive integer times.

    Two paths are equal iff their start times and full trajectories agree.
    """

    start_time: int
    positions: tuple[int, ...]

    @property
    def end_time(self) -> int:
        return self.start_time + len(self.positions) - 1

    @property
    def start(self) -> tuple[int, int]:
        return self.positions[0], self.start_time

    def at(self, t: int) -> int:
        return self.positions[t - self.start_time]

    def defined_at(self, t: int) -> bool:
        return self.start_time <= t <= self.end_time

    def increments(self) -> np.ndarray:
        return np.diff(np.asarray(self.positions, dtype=np.int64))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=np.int64)
