"""Natural cubic spline bases in exposure time, constrained through the origin."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_integer
from .exceptions import DomainError


@dataclass(frozen=True)
class SplineBasis:
    """``d`` natural cubic spline functions with ``b_k(0) = 0``.

    Built from the truncated-power representation on ``d + 1`` knots; the
    constant function is removed by the origin constraint, which leaves the
    identity ``s`` and ``d - 1`` functions that vanish left of the first knot.
    """

    knots: tuple

    @property
    def df(self) -> int:
        return len(self.knots) - 1

    def __call__(self, s, deriv: int = 0) -> np.ndarray:
        return evaluate(self, s, deriv)


def build_basis(df: int, max_exposure: int) -> SplineBasis:
    """Basis with boundary knots 1 and ``max_exposure``.

    Interior knots sit at evenly spaced quantiles (``k / df``) of the
    positive exposure times ``1..max_exposure``.
    """
    max_exposure = check_integer(max_exposure, "max_exposure", low=2)
    df = check_integer(df, "df", low=2)
    if df > max_exposure:
        raise DomainError(f"df={df} exceeds the {max_exposure} observed exposure times")
    grid = np.arange(1, max_exposure + 1, dtype=float)
    interior = np.quantile(grid, np.arange(1, df) / df)
    knots = (1.0, *interior.tolist(), float(max_exposure))
    return SplineBasis(knots)


def _cube_plus(x, k, deriv):
    t = np.maximum(x - k, 0.0)
    if deriv == 0:
        return t ** 3
    if deriv == 1:
        return 3 * t ** 2
    return 6 * t


def evaluate(basis: SplineBasis, s, deriv: int = 0) -> np.ndarray:
    """Evaluate the basis (or a derivative) at ``s``.

    Returns shape ``(d,)`` for scalar ``s`` and ``(len(s), d)`` otherwise.
    """
    if deriv not in (0, 1, 2):
        raise DomainError("deriv must be 0, 1 or 2")
    x = np.asarray(s, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)[:, None]
    knots = np.asarray(basis.knots)
    last = knots[-1]

    def d_k(k):
        return (_cube_plus(x, k, deriv) - _cube_plus(x, last, deriv)) / (last - k)

    linear = {0: x, 1: np.ones_like(x), 2: np.zeros_like(x)}[deriv]
    d_ref = d_k(knots[-2])
    cols = [linear] + [d_k(k) - d_ref for k in knots[:-2]]
    out = np.hstack(cols)
    return out[0] if scalar else out
