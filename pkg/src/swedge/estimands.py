"""TATE, PTE and LTE estimates as linear contrasts of fitted treatment parameters."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .exceptions import DomainError
from .models import FittedModel

METHODS = ("right", "trapezoid")


@dataclass(frozen=True)
class Estimand:
    """``TATE`` over ``[s1, s2]``, ``PTE`` at ``s0``, or ``LTE``.

    LTE is the point effect at the largest observed exposure time.
    """

    kind: str
    s1: Optional[int] = None
    s2: Optional[int] = None
    s0: Optional[int] = None

    def __post_init__(self):
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        for name in ("s0", "s1", "s2"):
            v = getattr(self, name)
            if v is not None:
                if isinstance(v, bool) or float(v) != int(v):
                    raise DomainError(f"{name} must be an integer, got {v!r}")
                object.__setattr__(self, name, int(v))
        if kind == "TATE":
            if self.s1 is None or self.s2 is None:
                raise DomainError("TATE needs s1 and s2")
            if not 0 <= self.s1 < self.s2:
                raise DomainError(f"TATE needs 0 <= s1 < s2, got [{self.s1}, {self.s2}]")
        elif kind == "PTE":
            if self.s0 is None or self.s0 < 1:
                raise DomainError("PTE needs an exposure time s0 >= 1")
        elif kind != "LTE":
            raise DomainError(f"unknown estimand {self.kind!r}")

    @classmethod
    def tate(cls, s1, s2):
        return cls("TATE", s1=s1, s2=s2)

    @classmethod
    def pte(cls, s0):
        return cls("PTE", s0=s0)

    @classmethod
    def lte(cls):
        return cls("LTE")

    @classmethod
    def parse(cls, text: str) -> "Estimand":
        """Parse ``tate:S1:S2``, ``pte:S0`` or ``lte``."""
        parts = text.strip().lower().split(":")
        try:
            if parts[0] == "tate" and len(parts) == 3:
                return cls.tate(float(parts[1]), float(parts[2]))
            if parts[0] == "pte" and len(parts) == 2:
                return cls.pte(float(parts[1]))
            if parts == ["lte"]:
                return cls.lte()
        except ValueError as exc:
            raise DomainError(f"bad estimand {text!r}") from exc
        raise DomainError(f"bad estimand {text!r}; use tate:S1:S2, pte:S0 or lte")

    @property
    def label(self) -> str:
        if self.kind == "TATE":
            return f"TATE[{self.s1},{self.s2}]"
        if self.kind == "PTE":
            return f"PTE[{self.s0}]"
        return "LTE"


@dataclass(frozen=True)
class EstimandEstimate:
    kind: str
    method: str
    estimate: float
    se: float
    ci: tuple
    z: float
    p: float

    def as_dict(self) -> dict:
        return {"estimate": self.estimate, "se": self.se, "ci_lo": self.ci[0],
                "ci_hi": self.ci[1], "z": self.z, "p": self.p}


@dataclass(frozen=True)
class ContrastVector:
    M: np.ndarray

    def __len__(self):
        return len(self.M)


def riemann_weights(s1: int, s2: int, method: str = "right") -> np.ndarray:
    """Weights on point effects at exposure times ``0..s2`` for a TATE.

    The right-hand sum averages ``delta(s1+1..s2)``; the trapezoid sum
    averages adjacent pairs, with ``delta(0) = 0``.
    """
    if method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}")
    w = np.zeros(s2 + 1)
    width = s2 - s1
    if method == "right":
        w[s1 + 1:] = 1.0 / width
    else:
        w[s1:s2 + 1] = 1.0 / width
        w[s1] = w[s2] = 0.5 / width
    return w


def _extended_map(fit: FittedModel, s_max: int) -> np.ndarray:
    L = fit.curve_map
    S = fit.max_exposure
    if s_max <= S:
        return L
    if fit.spec.kind not in ("IT", "RETI"):
        raise DomainError(
            f"exposure time {s_max} is beyond the observed maximum {S}; "
            f"{fit.spec.kind} fits do not extrapolate"
        )
    return np.vstack([L, np.repeat(L[-1:], s_max - S, axis=0)])


def contrast(fit: FittedModel, estimand: Estimand, method: str = "right") -> ContrastVector:
    """Row vector ``M`` with ``estimate = M @ theta_hat``.

    Exposure times beyond the observed range are allowed only for models
    that assume a flat curve there (IT and RETI).
    """
    if method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}")
    if estimand.kind == "TATE":
        L = _extended_map(fit, estimand.s2)
        M = riemann_weights(estimand.s1, estimand.s2, method) @ L[: estimand.s2 + 1]
    else:
        s0 = fit.max_exposure if estimand.kind == "LTE" else estimand.s0
        M = _extended_map(fit, s0)[s0]
    return ContrastVector(np.asarray(M, dtype=float))


def wald_summary(value: float, se: float, level: float):
    """Normal-theory interval, z statistic and two-sided p-value."""
    crit = stats.norm.ppf(0.5 + level / 2)
    if se > 0:
        z = value / se
        p = float(2 * stats.norm.sf(abs(z)))
    else:
        z = 0.0 if value == 0 else float(np.sign(value) * np.inf)
        p = 1.0 if value == 0 else 0.0
    return (value - crit * se, value + crit * se), float(z), p


def estimate(fit: FittedModel, estimand: Estimand, method: str = "right") -> EstimandEstimate:
    M = contrast(fit, estimand, method).M
    value = float(M @ fit.theta_hat)
    var = float(M @ fit.vcov_theta @ M)
    se = float(np.sqrt(max(var, 0.0)))
    ci, z, p = wald_summary(value, se, fit.ci_level)
    return EstimandEstimate(estimand.label, method, value, se, ci, z, p)


def effect_curve_estimate(fit: FittedModel):
    """Point effect with pointwise Wald interval at each exposure time ``1..S``."""
    rows = []
    for s in range(1, fit.max_exposure + 1):
        e = estimate(fit, Estimand.pte(s))
        rows.append((s, e.estimate, e.ci[0], e.ci[1]))
    return rows
