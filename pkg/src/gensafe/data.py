"""Rollout data model: single transitions and the bounded dataset that stores them."""
import logging
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

from gensafe.errors import NumericDomainError, ShapeMismatchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DataSample:
    """Information observed in one timestep: (s, a, s', r, c)."""
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward: float
    cost: float

    def __post_init__(self):
        if not np.isfinite(self.cost) or self.cost < 0:
            raise NumericDomainError(f"Cost must be a finite non-negative number, got {self.cost}")
        if np.shape(self.state) != np.shape(self.next_state):
            raise ShapeMismatchError(
                f"State and next state shapes differ: {np.shape(self.state)} vs {np.shape(self.next_state)}")


class Dataset:
    """Ordered, bounded collection of data samples.

    Insertion order is preserved and the oldest samples are evicted first once
    the capacity is reached.

    Example:
        data = Dataset(capacity=3)
        for sample in samples:
            data.append(sample)
        data.states()  # (len(data), n_s) array
    """

    def __init__(self, capacity: Optional[int] = None, samples: Iterable[DataSample] = ()):
        if capacity is not None and capacity <= 0:
            raise ValueError(f"Dataset capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._samples: deque[DataSample] = deque(maxlen=capacity)
        self.evicted = 0
        for sample in samples:
            self.append(sample)

    def append(self, sample: DataSample) -> None:
        if self.capacity is not None and len(self._samples) == self.capacity:
            self.evicted += 1
        self._samples.append(sample)

    def clear(self) -> None:
        self._samples.clear()

    def __len__(self) -> int:
        return len(self._samples)

    def __iter__(self) -> Iterator[DataSample]:
        return iter(self._samples)

    def __getitem__(self, index: int) -> DataSample:
        return self._samples[index]

    def _stack(self, field: str, width: int) -> np.ndarray:
        if not self._samples:
            return np.zeros((0, width))
        return np.stack([getattr(s, field) for s in self._samples]).astype(float)

    def states(self) -> np.ndarray:
        width = len(self._samples[0].state) if self._samples else 0
        return self._stack('state', width)

    def actions(self) -> np.ndarray:
        width = len(self._samples[0].action) if self._samples else 0
        return self._stack('action', width)

    def next_states(self) -> np.ndarray:
        width = len(self._samples[0].next_state) if self._samples else 0
        return self._stack('next_state', width)

    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self._samples], dtype=float)

    def costs(self) -> np.ndarray:
        return np.array([s.cost for s in self._samples], dtype=float)
