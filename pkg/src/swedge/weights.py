"""Immediate-treatment estimator under an exposure-time-varying effect.

When data with effect curve ``delta(s)`` are analyzed with a single
treatment indicator, the fitted coefficient has expectation
``sum_s w(Q, phi, s) * delta(s)``. This module gives the closed-form
weights and estimator for a standard design with exchangeable
correlation, plus a generic GLS projection that recovers the weights for
any within-cluster correlation structure.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_integer
from .design import StudyDesign
from .exceptions import DomainError


def _check_phi(phi):
    if not 0 <= phi < 1:
        raise DomainError(f"phi must lie in [0, 1), got {phi}")


def _denominator(Q, phi):
    return Q * (Q + 1) * (phi * Q * Q + 2 * Q - phi * Q - 2)


def weight(Q: int, phi: float, s) -> float:
    """Closed-form weight on the point effect at exposure time ``s``."""
    Q = check_integer(Q, "Q", low=2)
    _check_phi(phi)
    s_arr = np.asarray(s)
    if np.any(s_arr < 1) or np.any(s_arr > Q) or np.any(s_arr != np.round(s_arr)):
        raise DomainError(f"s must be an integer in 1..{Q}")
    num = 6 * (s_arr - Q - 1) * ((1 + 2 * phi * Q) * s_arr - (1 + phi + phi * Q) * Q)
    out = num / _denominator(Q, phi)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CorrelationSpec:
    """Within-cluster correlation of individual outcomes.

    kind ``exchangeable`` takes ``phi`` (correlation of cluster-period
    means); ``nested_exchangeable`` takes ``rho_w`` (same period) and
    ``rho_b`` (different periods); ``random_treatment`` takes ``rho_0``
    (both control), ``rho_1`` (both treated) and ``rho_10`` (one of each).
    """

    kind: str
    params: tuple

    _ARITY = {"exchangeable": 1, "nested_exchangeable": 2, "random_treatment": 3}

    def __post_init__(self):
        if self.kind not in self._ARITY:
            raise DomainError(f"unknown correlation kind {self.kind!r}")
        params = tuple(float(p) for p in self.params)
        if len(params) != self._ARITY[self.kind]:
            raise DomainError(f"{self.kind} takes {self._ARITY[self.kind]} parameter(s)")
        if any(not 0 <= p < 1 for p in params):
            raise DomainError("correlations must lie in [0, 1)")
        object.__setattr__(self, "params", params)

    @classmethod
    def exchangeable(cls, phi):
        return cls("exchangeable", (phi,))

    @classmethod
    def nested_exchangeable(cls, rho_w, rho_b):
        return cls("nested_exchangeable", (rho_w, rho_b))

    @classmethod
    def random_treatment(cls, rho_0, rho_1, rho_10):
        return cls("random_treatment", (rho_0, rho_1, rho_10))

    def cluster_matrix(self, periods, treated, cluster_size) -> np.ndarray:
        """Correlation matrix for the individuals of one cluster.

        ``periods`` and ``treated`` label each individual row.
        """
        periods = np.asarray(periods)
        x = np.asarray(treated)
        n = len(periods)
        if self.kind == "exchangeable":
            (phi,) = self.params
            # individual ICC giving cluster-period mean correlation phi
            rho = phi / (cluster_size - (cluster_size - 1) * phi)
            R = np.full((n, n), rho)
        elif self.kind == "nested_exchangeable":
            rho_w, rho_b = self.params
            R = np.where(periods[:, None] == periods[None, :], rho_w, rho_b)
        else:
            r0, r1, r10 = self.params
            both = x[:, None] * x[None, :]
            neither = (1 - x[:, None]) * (1 - x[None, :])
            R = np.where(both == 1, r1, np.where(neither == 1, r0, r10)).astype(float)
        np.fill_diagonal(R, 1.0)
        return R


@dataclass(frozen=True)
class WeightProfile:
    Q: int
    phi: float
    weights: tuple
    corr: Optional[CorrelationSpec] = None

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights)


def weight_profile(Q: int, phi: float) -> WeightProfile:
    s = np.arange(1, check_integer(Q, "Q", low=2) + 1)
    return WeightProfile(Q, phi, weight(Q, phi, s), CorrelationSpec.exchangeable(phi))


def it_closed_form(means, Q: int, phi: float) -> float:
    """IT estimate as an explicit linear combination of sequence-period means.

    ``means`` is ``Q x (Q+1)`` with row ``q-1`` holding sequence ``q``.
    """
    Q = check_integer(Q, "Q", low=2)
    _check_phi(phi)
    means = np.asarray(means, dtype=float)
    if means.shape != (Q, Q + 1):
        raise DomainError(f"means must be {Q} x {Q + 1}, got {means.shape}")
    q = np.arange(1, Q + 1)[:, None]
    j = np.arange(1, Q + 2)[None, :]
    coef = Q * (j > q) - j + 1 + phi * Q * (2 * q - Q - 1) / (2 * (1 + phi * Q))
    scale = 12 * (1 + phi * Q) / _denominator(Q, phi)
    return float(scale * np.sum(coef * means))


def expected_it_estimate(profile: WeightProfile, pte) -> float:
    """Expectation of the IT estimate given point effects ``delta(1..Q)``."""
    pte = np.asarray(pte, dtype=float)
    w = profile.as_array()
    if pte.shape != w.shape:
        raise DomainError(f"need {len(w)} point effects, got {pte.shape}")
    return float(w @ pte)


def _it_design(design: StudyDesign):
    """Individual-level rows of one cluster per sequence for the IT model."""
    Q, J, K = design.num_sequences, design.num_periods, design.cluster_size
    blocks = []
    for q in range(1, Q + 1):
        period = np.repeat(np.arange(1, J + 1), K)
        x = (period > q).astype(int)
        # columns: intercept, treatment, beta_2..beta_J
        X = np.zeros((J * K, J + 1))
        X[:, 0] = 1.0
        X[:, 1] = x
        X[:, 2:] = period[:, None] == np.arange(2, J + 1)[None, :]
        blocks.append((period, x, np.maximum(0, period - q), X))
    return blocks


def numeric_weights(design: StudyDesign, corr: CorrelationSpec) -> WeightProfile:
    """Recover the IT weights by projecting indicator effect curves through GLS.

    For each exposure time ``s`` the expected IT estimate under the curve
    ``e_s`` is the sum of the GLS estimator row over all observations at
    exposure ``s``. Time effects are annihilated exactly, so no simulation
    is involved.
    """
    if not design.is_standard:
        raise DomainError("weights are defined for standard designs only")
    blocks = _it_design(design)
    K = design.cluster_size
    info = 0.0
    parts = []
    for period, x, s, X in blocks:
        R = corr.cluster_matrix(period, x, K)
        try:
            L = np.linalg.cholesky(R)
        except np.linalg.LinAlgError as exc:
            raise DomainError(f"{corr.kind} correlation matrix is not positive definite") from exc
        Xw = np.linalg.solve(L, X)
        info = info + Xw.T @ Xw
        # rows of R^{-1} X
        parts.append((np.linalg.solve(L.T, Xw), s))
    info_inv = np.linalg.inv(info)
    Q = design.num_sequences
    w = np.zeros(Q)
    for RinvX, s in parts:
        row = RinvX @ info_inv[:, 1]
        w += np.bincount(s, weights=row, minlength=Q + 1)[1:]
    phi = corr.params[0] if corr.kind == "exchangeable" else float("nan")
    return WeightProfile(Q, phi, w, corr)


# Three sequences, four periods, two individuals per cluster-period.
THREE_SEQUENCE_DESIGN = StudyDesign(num_sequences=3, clusters_per_sequence=1, cluster_size=2)
