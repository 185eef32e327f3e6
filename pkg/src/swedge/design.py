"""Stepped wedge design geometry and exposure-time algebra.

Sequences and periods are 1-indexed. Sequence ``q`` crosses over to the
treatment condition at period ``q + 1``; exposure time 0 means control.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError


@dataclass(frozen=True)
class StudyDesign:
    """Balanced stepped wedge layout.

    Parameters
    ----------
    num_sequences : int
        Number of sequences ``Q`` (at least 2).
    clusters_per_sequence : int
        Clusters randomized to each sequence.
    cluster_size : int
        Individuals sampled per cluster-period (``K``).
    extra_periods : int
        Periods appended after the final sequence has crossed over.
    """

    num_sequences: int
    clusters_per_sequence: int = 1
    cluster_size: int = 1
    extra_periods: int = 0

    def __post_init__(self):
        if int(self.num_sequences) != self.num_sequences or self.num_sequences < 2:
            raise DomainError(f"num_sequences must be an integer >= 2, got {self.num_sequences}")
        if self.clusters_per_sequence < 1:
            raise DomainError("clusters_per_sequence must be >= 1")
        if self.cluster_size < 1:
            raise DomainError("cluster_size must be >= 1")
        if self.extra_periods < 0:
            raise DomainError("extra_periods must be >= 0")

    @classmethod
    def from_clusters(cls, num_clusters, num_periods, cluster_size, extra_periods=0):
        """Build a design from the total cluster count and period count."""
        q = num_periods - 1 - extra_periods
        if q < 2 or num_clusters % q:
            raise DomainError(
                f"{num_clusters} clusters over {num_periods} periods is not a balanced standard design"
            )
        return cls(q, num_clusters // q, cluster_size, extra_periods)

    @property
    def num_periods(self) -> int:
        return self.num_sequences + 1 + self.extra_periods

    @property
    def num_clusters(self) -> int:
        return self.num_sequences * self.clusters_per_sequence

    @property
    def max_exposure(self) -> int:
        return self.num_periods - 1

    @property
    def is_standard(self) -> bool:
        return self.extra_periods == 0

    def _check(self, q, j):
        if not 1 <= q <= self.num_sequences:
            raise DomainError(f"sequence {q} outside 1..{self.num_sequences}")
        if not 1 <= j <= self.num_periods:
            raise DomainError(f"period {j} outside 1..{self.num_periods}")

    def exposure_time(self, q: int, j: int) -> int:
        self._check(q, j)
        return max(0, j - q)

    def treatment_indicator(self, q: int, j: int) -> int:
        self._check(q, j)
        return int(j >= q + 1)

    def exposure_matrix(self) -> np.ndarray:
        """``Q x J`` integer matrix of exposure times."""
        q = np.arange(1, self.num_sequences + 1)[:, None]
        j = np.arange(1, self.num_periods + 1)[None, :]
        return np.maximum(0, j - q)

    def treatment_matrix(self) -> np.ndarray:
        return (self.exposure_matrix() > 0).astype(int)

    def cluster_sequences(self) -> np.ndarray:
        """Sequence label of each cluster, clusters numbered contiguously by sequence."""
        return np.repeat(np.arange(1, self.num_sequences + 1), self.clusters_per_sequence)


def exposure_time(design: StudyDesign, q: int, j: int) -> int:
    return design.exposure_time(q, j)


def treatment_indicator(design: StudyDesign, q: int, j: int) -> int:
    return design.treatment_indicator(q, j)


def derive_phi(tau2: float, sigma2: float, n: int) -> float:
    """Correlation between two cluster-period means of size ``n`` in one cluster."""
    if sigma2 <= 0:
        raise DomainError("sigma2 must be positive")
    if n < 1:
        raise DomainError("n must be >= 1")
    if tau2 < 0:
        raise DomainError("tau2 must be nonnegative")
    return tau2 / (tau2 + sigma2 / n)
