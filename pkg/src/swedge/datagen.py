"""Synthetic stepped wedge data with exposure-time-varying effects.

Outcomes follow

    y = mu + beta_j + (delta * h(s) + eta_i) * X_ij + alpha_i + eps

with ``(alpha_i, eta_i)`` bivariate normal per cluster and ``eps`` iid
normal. Randomness is drawn from per-cluster substreams: cluster ``i``
(0-based) of a call seeded with ``seed`` uses
``SeedSequence(entropy=seed, spawn_key=(i,))``, i.e. the ``i``-th child of
``SeedSequence(seed).spawn``. Replicate streams used by the simulation
harness are derived the same way one level up, so replicate ``r`` of a
scenario seeded with ``S`` is generated from
``SeedSequence(entropy=S, spawn_key=(r,))``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .design import StudyDesign
from .exceptions import DomainError

CSV_COLUMNS = ("cluster", "sequence", "period", "treated", "exposure", "outcome")

# Interior values for the canonical curves; only the shape constraints
# (start at 0, max 1, flattening times) are fixed by the model of interest.
_CANONICAL = {
    "a": (1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
    "b": (0.0, 0.0, 1.0, 1.0, 1.0, 1.0),
    "c": tuple((1 - 2.0 ** -s) / (1 - 2.0 ** -6) for s in range(1, 7)),
    "d": (0.05, 0.15, 0.45, 1.0, 1.0, 1.0),
}


@dataclass(frozen=True)
class EffectCurve:
    """Step-function effect curve ``h(1..S)``; ``h(0) = 0`` implicitly."""

    values: tuple
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise DomainError("effect curve needs at least one exposure time")

    @property
    def max_exposure(self) -> int:
        return len(self.values)

    def at(self, s) -> np.ndarray:
        """Vectorized lookup with ``h(0) = 0``."""
        s = np.asarray(s, dtype=int)
        if np.any(s < 0) or np.any(s > self.max_exposure):
            raise DomainError(f"exposure time outside 0..{self.max_exposure}")
        return np.concatenate([[0.0], self.values])[s]

    def extend(self, S: int) -> "EffectCurve":
        """Continue the curve flat past its last value."""
        if S <= self.max_exposure:
            return EffectCurve(self.values[:S], self.label)
        return EffectCurve(self.values + (self.values[-1],) * (S - self.max_exposure), self.label)

    def scaled(self, c: float) -> np.ndarray:
        return c * np.asarray(self.values)


def canonical_curve(kind: str, S: int = 6) -> EffectCurve:
    """One of the four reference effect curves on exposure times ``1..S``.

    ``a`` is immediate and constant, ``b`` delayed and flat from s=3, ``c``
    concave and still rising at s=6, ``d`` convex then flat from s=4. Curves
    are flat beyond s=6.
    """
    if kind not in _CANONICAL:
        raise DomainError(f"unknown curve kind {kind!r}; expected one of a, b, c, d")
    if kind != "a" and S < 6:
        raise DomainError(f"curve {kind!r} needs S >= 6")
    if S < 1:
        raise DomainError("S must be >= 1")
    return EffectCurve(_CANONICAL[kind], kind).extend(S)


def linear_trend(num_periods: int, total: float = -0.5) -> tuple:
    """``beta_j = total * (j - 1) / (J - 1)``, so ``beta_1 = 0``."""
    return tuple(total * (j - 1) / (num_periods - 1) for j in range(1, num_periods + 1))


@dataclass(frozen=True)
class GenParams:
    mu: float = 1.0
    delta: float = 0.5
    sigma: float = 2.0
    tau: float = 0.5
    nu: float = 0.0
    rho_re: float = 0.0
    # None means a linear trend from 0 down to -0.5 over the design's periods.
    time_trend: Optional[tuple] = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise DomainError("sigma must be positive")
        if self.tau < 0 or self.nu < 0:
            raise DomainError("tau and nu must be nonnegative")
        if not -1 <= self.rho_re <= 1:
            raise DomainError("rho_re must lie in [-1, 1]")
        if self.time_trend is not None:
            object.__setattr__(self, "time_trend", tuple(float(b) for b in self.time_trend))
            if self.time_trend[0] != 0:
                raise DomainError("time_trend[0] (beta_1) must be 0")

    def trend_for(self, design: StudyDesign) -> np.ndarray:
        if self.time_trend is None:
            return np.asarray(linear_trend(design.num_periods))
        if len(self.time_trend) != design.num_periods:
            raise DomainError(
                f"time_trend has {len(self.time_trend)} entries; design has {design.num_periods} periods"
            )
        return np.asarray(self.time_trend)


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """Long-format individual outcomes with their design labels."""

    cluster: np.ndarray
    sequence: np.ndarray
    period: np.ndarray
    treated: np.ndarray
    exposure: np.ndarray
    outcome: np.ndarray
    design: StudyDesign

    def __len__(self):
        return len(self.outcome)

    def __eq__(self, other):
        if not isinstance(other, TrialDataset):
            return NotImplemented
        return self.design == other.design and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in CSV_COLUMNS
        )

    __hash__ = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({c: getattr(self, c) for c in CSV_COLUMNS})

    def to_csv(self, path_or_buf=None):
        """Write the CSV interchange format; returns text when no path is given."""
        frame = self.to_frame()
        if path_or_buf is None:
            buf = io.StringIO()
            frame.to_csv(buf, index=False, float_format="%.17g")
            return buf.getvalue()
        frame.to_csv(path_or_buf, index=False, float_format="%.17g", encoding="utf-8")

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "TrialDataset":
        from ._validation import check_frame

        return check_frame(frame)

    @classmethod
    def read_csv(cls, path_or_buf) -> "TrialDataset":
        from ._validation import read_trial_csv

        return read_trial_csv(path_or_buf)

    def with_outcome(self, outcome) -> "TrialDataset":
        outcome = np.asarray(outcome, dtype=float)
        if outcome.shape != self.outcome.shape:
            raise DomainError("outcome length mismatch")
        return TrialDataset(self.cluster, self.sequence, self.period, self.treated,
                            self.exposure, outcome, self.design)

    @cached_property
    def cells(self) -> "CellSummary":
        return CellSummary.from_dataset(self)


@dataclass(frozen=True, eq=False)
class CellSummary:
    """Cluster-period sufficient statistics for identity-link fitting.

    ``means`` is ``I x J``; ``within_ss`` is the pooled sum of squared
    deviations of individuals around their cluster-period mean.
    """

    means: np.ndarray
    cluster_sequence: np.ndarray
    cluster_size: int
    within_ss: float
    n_obs: int
    design: StudyDesign

    @classmethod
    def from_dataset(cls, data: TrialDataset) -> "CellSummary":
        d = data.design
        I, J = d.num_clusters, d.num_periods
        idx = data.cluster * J + (data.period - 1)
        counts = np.bincount(idx, minlength=I * J)
        sums = np.bincount(idx, weights=data.outcome, minlength=I * J)
        means = sums / counts
        dev = data.outcome - means[idx]
        seq = np.zeros(I, dtype=int)
        seq[data.cluster] = data.sequence
        return cls(means.reshape(I, J), seq, d.cluster_size, float(dev @ dev), len(data), d)


def _cluster_stream(seed, i: int) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + (i,))
    else:
        ss = np.random.SeedSequence(int(seed), spawn_key=(i,))
    return np.random.default_rng(ss)


def replicate_seed(seed: int, replicate: int) -> np.random.SeedSequence:
    """Seed sequence for replicate ``replicate`` of a scenario seeded with ``seed``."""
    return np.random.SeedSequence(int(seed), spawn_key=(int(replicate),))


def design_frame(design: StudyDesign) -> dict:
    """Label columns (everything but the outcome) in canonical row order.

    Rows are ordered by cluster, then period, then individual.
    """
    I, J, K = design.num_clusters, design.num_periods, design.cluster_size
    cluster = np.repeat(np.arange(I), J * K)
    period = np.tile(np.repeat(np.arange(1, J + 1), K), I)
    sequence = design.cluster_sequences()[cluster]
    exposure = np.maximum(0, period - sequence)
    return dict(cluster=cluster, sequence=sequence, period=period,
                treated=(exposure > 0).astype(int), exposure=exposure)


def generate(design: StudyDesign, curve: EffectCurve, params: GenParams, seed) -> TrialDataset:
    """Draw one trial dataset; the same seed gives a bit-identical dataset."""
    if curve.max_exposure < design.max_exposure:
        raise DomainError(
            f"curve covers exposure 1..{curve.max_exposure}; design needs 1..{design.max_exposure}"
        )
    labels = design_frame(design)
    I, J, K = design.num_clusters, design.num_periods, design.cluster_size
    beta = params.trend_for(design)
    rho = params.rho_re
    re = np.empty((I, 2))
    eps = np.empty((I, J * K))
    for i in range(I):
        rng = _cluster_stream(seed, i)
        z = rng.standard_normal(2)
        re[i] = (params.tau * z[0], params.nu * (rho * z[0] + np.sqrt(1.0 - rho * rho) * z[1]))
        eps[i] = rng.standard_normal(J * K)
    cl = labels["cluster"]
    x = labels["treated"]
    y = (params.mu + beta[labels["period"] - 1]
         + (params.delta * curve.at(labels["exposure"]) + re[cl, 1]) * x
         + re[cl, 0] + params.sigma * eps.ravel())
    return TrialDataset(outcome=y, design=design, **labels)
