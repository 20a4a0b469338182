"""Reservoir-sampled replay buffer."""

from __future__ import annotations

from collections import Counter
from typing import Optional, Union

import numpy as np

from .errors import EmptyMemoryError
from .nn import Batch
from .rng import make_rng


class ReservoirBuffer:
    """Fixed-capacity uniform sample of every example ever offered.

    ``rng`` drives insertion decisions only; draws for replay and probing take
    their own generator so that the streams stay independent.
    """

    def __init__(self, capacity: int, rng: Union[int, np.random.Generator] = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.rng = rng if isinstance(rng, np.random.Generator) else make_rng(rng, "buffer")
        self.seen_count = 0
        self._inputs: Optional[np.ndarray] = None
        self._labels = np.zeros(self.capacity, dtype=np.int64)
        self._tasks = np.zeros(self.capacity, dtype=np.int64)
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @property
    def inputs(self) -> np.ndarray:
        if self._inputs is None:
            return np.zeros((0,))
        return self._inputs[:self._size]

    @property
    def labels(self) -> np.ndarray:
        return self._labels[:self._size]

    @property
    def task_ids(self) -> np.ndarray:
        return self._tasks[:self._size]

    def _store(self, slot, x, y, task_id):
        if self._inputs is None:
            self._inputs = np.zeros((self.capacity,) + np.shape(x))
        self._inputs[slot] = x
        self._labels[slot] = y
        self._tasks[slot] = task_id

    def add(self, x, y: int, task_id: int = 0) -> None:
        self.seen_count += 1
        if self._size < self.capacity:
            self._store(self._size, x, y, task_id)
            self._size += 1
            return
        j = int(self.rng.integers(0, self.seen_count))
        if j < self.capacity:
            self._store(j, x, y, task_id)

    def add_all(self, experience) -> None:
        """Offer every training example of a task, in dataset order."""
        train = experience.train
        for x, y in zip(train.inputs, train.labels):
            self.add(x, int(y), experience.task_id)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """``n`` residents drawn uniformly with replacement."""
        if self._size == 0:
            raise EmptyMemoryError("replay buffer is empty")
        idx = rng.integers(0, self._size, size=n)
        return Batch(self._inputs[idx], self._labels[idx])

    def classes_present(self) -> set:
        return {int(c) for c in np.unique(self.labels)}

    def is_sufficient(self, min_items: int) -> bool:
        return self._size >= min_items

    def snapshot(self) -> dict:
        per_class = Counter(int(c) for c in self.labels)
        per_task = Counter(int(t) for t in self.task_ids)
        return {
            "capacity": self.capacity,
            "seen_count": self.seen_count,
            "size": self._size,
            "per_class": {str(k): per_class[k] for k in sorted(per_class)},
            "per_task": {str(k): per_task[k] for k in sorted(per_task)},
        }
