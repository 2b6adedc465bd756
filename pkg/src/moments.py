"""Streaming, mergeable mean/variance accumulators."""

from dataclasses import dataclass, field
from typing import Iterable, Optional, Tuple

import numpy as np


@dataclass
class MomentAccumulator:
    """Count, mean and centered sum of squares (M2) over a stream of arrays.

    Batches are folded in with the pairwise update of Chan et al., so any
    partition of the data merged in any order gives the same moments up to
    rounding.
    """

    shape: Tuple[int, ...] = ()
    count: int = 0
    mean: np.ndarray = field(default=None)
    m2: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.shape)
        if self.m2 is None:
            self.m2 = np.zeros(self.shape)

    def update(self, values: np.ndarray) -> 'MomentAccumulator':
        """Fold in a batch of observations stacked along axis 0."""
        batch = np.asarray(values, dtype=float).reshape((-1,) + self.shape)
        if batch.shape[0] == 0:
            return self
        batch_mean = batch.mean(axis=0)
        batch_m2 = ((batch - batch_mean) ** 2).sum(axis=0)
        return self._combine(batch.shape[0], batch_mean, batch_m2)

    def merge(self, other: 'MomentAccumulator') -> 'MomentAccumulator':
        if other.count == 0:
            return self
        return self._combine(other.count, other.mean, other.m2)

    def _combine(self, n_b: int, mean_b: np.ndarray, m2_b: np.ndarray) -> 'MomentAccumulator':
        n_a = self.count
        total = n_a + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n_b / total)
        self.m2 = self.m2 + m2_b + delta ** 2 * (n_a * n_b / total)
        self.count = total
        return self

    def variance(self, ddof: int = 1) -> np.ndarray:
        if self.count - ddof <= 0:
            return np.full(self.shape, np.nan)
        return self.m2 / (self.count - ddof)

    def std(self, ddof: int = 1) -> np.ndarray:
        return np.sqrt(self.variance(ddof))

    @classmethod
    def pooled(cls, parts: Iterable['MomentAccumulator'], shape: Optional[Tuple[int, ...]] = None) -> 'MomentAccumulator':
        parts = list(parts)
        result = cls(shape if shape is not None else (parts[0].shape if parts else ()))
        for part in parts:
            result.merge(part)
        return result
