from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SampleBuffer:
    """Time-stamped (frame cells, teacher labels) tuples with horizon eviction.

    Entries are kept sorted by timestamp. Anything older than ``horizon``
    seconds before the newest entry is dropped eagerly on insert.
    """

    horizon: float = 240.0
    times: list[float] = field(default_factory=list)
    cells: list[np.ndarray] = field(default_factory=list)
    labels: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def newest(self) -> float | None:
        return self.times[-1] if self.times else None

    def add(self, timestamp: float, cells: np.ndarray, labels: np.ndarray) -> int:
        """Insert one sample, evict stale entries, return how many were evicted."""
        i = bisect.bisect_right(self.times, timestamp)
        self.times.insert(i, float(timestamp))
        self.cells.insert(i, np.asarray(cells, dtype=np.float64))
        self.labels.insert(i, np.asarray(labels, dtype=np.int64))
        return self.evict()

    def evict(self) -> int:
        if not self.times:
            return 0
        cutoff = self.times[-1] - self.horizon
        k = bisect.bisect_left(self.times, cutoff)
        if k:
            del self.times[:k], self.cells[:k], self.labels[:k]
        return k

    def window(self) -> range:
        """Indices of entries within ``horizon`` of the newest entry."""
        if not self.times:
            return range(0)
        k = bisect.bisect_left(self.times, self.times[-1] - self.horizon)
        return range(k, len(self.times))

    def sample(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        win = self.window()
        if len(win) == 0:
            raise ValueError("cannot sample from an empty buffer")
        return win.start + rng.integers(0, len(win), size=batch_size)

    def gather(self, idx) -> tuple[np.ndarray, np.ndarray]:
        x = np.concatenate([self.cells[i] for i in idx], axis=0)
        y = np.concatenate([self.labels[i] for i in idx])
        return x, y
