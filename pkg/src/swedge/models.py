"""Linear mixed models for exposure-time-varying treatment effects.

All models share categorical period effects and a cluster random
intercept; they differ in how the treatment term depends on exposure time:

* ``IT``: one coefficient for every treated cell,
* ``ETI``: one coefficient per exposure time,
* ``RETI(s*)``: ETI with exposure times ``>= s*`` pooled,
* ``NCS(d)``: natural cubic spline in exposure time with ``d`` coefficients.

Any of them can add a cluster random treatment effect correlated with the
random intercept. Fitting works on cluster-period means plus the pooled
within-cell sum of squares, which is exact for balanced complete designs
with an identity link. Variance components maximize the restricted (or
full) likelihood with the residual variance profiled out.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize, stats

from ._validation import check_dataset
from .datagen import CellSummary, TrialDataset
from .exceptions import ConvergenceError, DomainError, EstimationError
from .spline import SplineBasis, build_basis, evaluate

KINDS = ("IT", "ETI", "RETI", "NCS")
RHO_BOUND = 0.99
_LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class ModelSpec:
    """Which treatment structure to fit.

    ``param`` is the flattening time ``s*`` for RETI and the spline degrees
    of freedom for NCS; it is ignored otherwise.
    """

    kind: str = "ETI"
    param: Optional[int] = None
    random_treatment: bool = False
    ci_level: float = 0.95

    def __post_init__(self):
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise DomainError(f"unknown model kind {self.kind!r}")
        if kind in ("RETI", "NCS"):
            if self.param is None or int(self.param) != self.param or self.param < 1:
                raise DomainError(f"{kind} needs a positive integer parameter")
            object.__setattr__(self, "param", int(self.param))
        else:
            object.__setattr__(self, "param", None)
        if not 0 < self.ci_level < 1:
            raise DomainError("ci_level must lie in (0, 1)")

    @classmethod
    def parse(cls, text: str, random_treatment=False, ci_level=0.95) -> "ModelSpec":
        """Parse ``it``, ``eti``, ``reti:S`` or ``ncs:D``."""
        kind, _, arg = text.strip().partition(":")
        param = None
        if arg:
            try:
                param = int(arg)
            except ValueError as exc:
                raise DomainError(f"bad model parameter in {text!r}") from exc
        return cls(kind, param, random_treatment, ci_level)

    @property
    def label(self) -> str:
        base = self.kind if self.param is None else f"{self.kind}-{self.param}"
        return base + ("-RTE" if self.random_treatment else "")


@dataclass(frozen=True)
class VarianceComponents:
    tau2: float
    sigma2: float
    nu2: float = 0.0
    rho_re: float = 0.0

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise DomainError("sigma2 must be positive")
        if self.tau2 < 0 or self.nu2 < 0:
            raise DomainError("tau2 and nu2 must be nonnegative")
        if not -1 <= self.rho_re <= 1:
            raise DomainError("rho_re must lie in [-1, 1]")

    @property
    def icc(self) -> float:
        return self.tau2 / (self.tau2 + self.sigma2)


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: ModelSpec
    mu: float
    period_effects: np.ndarray  # beta_1..beta_J with beta_1 = 0
    theta_hat: np.ndarray
    vcov_theta: np.ndarray
    varcomp: VarianceComponents
    reml_value: float
    converged: bool
    n_iter: int
    curve_map: np.ndarray  # row s gives delta_hat(s) = curve_map[s] @ theta_hat
    method: str = "reml"
    basis: Optional[SplineBasis] = None
    vcov_fixed: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def max_exposure(self) -> int:
        return self.curve_map.shape[0] - 1

    @property
    def ci_level(self) -> float:
        return self.spec.ci_level

    @property
    def beta_hat(self) -> np.ndarray:
        """Intercept followed by ``beta_2..beta_J``."""
        return np.concatenate([[self.mu], self.period_effects[1:]])

    def curve(self) -> np.ndarray:
        """Point effect estimates at exposure times ``0..S``."""
        return self.curve_map @ self.theta_hat


def curve_map(spec: ModelSpec, max_exposure: int):
    """Matrix mapping treatment parameters to point effects at ``0..S``."""
    S = max_exposure
    s = np.arange(S + 1)
    basis = None
    if spec.kind == "IT":
        L = (s > 0).astype(float)[:, None]
    elif spec.kind == "ETI":
        L = np.eye(S + 1)[:, 1:]
    elif spec.kind == "RETI":
        if spec.param > S:
            raise DomainError(f"s*={spec.param} exceeds the maximum exposure time {S}")
        L = np.eye(spec.param + 1)[np.minimum(s, spec.param)][:, 1:]
    else:
        if spec.param > S:
            raise DomainError(f"df={spec.param} exceeds the maximum exposure time {S}")
        basis = build_basis(spec.param, S)
        L = evaluate(basis, s)
    return L, basis


class _Problem:
    """Sequence-grouped sufficient statistics and design for one fit."""

    def __init__(self, cells: CellSummary, spec: ModelSpec):
        d = cells.design
        Q, J, K = d.num_sequences, d.num_periods, d.cluster_size
        self.spec = spec
        self.K = K
        self.J = J
        self.L, self.basis = curve_map(spec, d.max_exposure)
        exposure = d.exposure_matrix()  # Q x J
        observed = np.zeros(d.max_exposure + 1, dtype=bool)
        observed[exposure.ravel()] = True
        needed = np.flatnonzero(np.any(self.L != 0, axis=1))
        missing = [int(s) for s in needed if not observed[s]]
        if missing:
            raise EstimationError(f"no observations at exposure time(s) {missing}")
        p_treat = self.L.shape[1]
        X = np.zeros((Q, J, J + p_treat))
        X[:, :, 0] = 1.0
        X[:, 1:, 1:J] = np.eye(J)[1:, 1:]
        X[:, :, J:] = self.L[exposure]
        self.X = X
        self.x = (exposure > 0).astype(float)
        self.p = X.shape[2]
        self.n_treat = p_treat
        seq = cells.cluster_sequence - 1
        self.n = np.bincount(seq, minlength=Q).astype(float)
        if np.any(self.n == 0):
            raise EstimationError("every sequence needs at least one cluster")
        Y = cells.means
        self.sum_y = np.zeros((Q, J))
        np.add.at(self.sum_y, seq, Y)
        self.Y = Y
        self.seq = seq
        self.within_ss = cells.within_ss
        self.N = cells.n_obs
        self.IJlogK = Y.size * np.log(K)
        self.I = Y.shape[0]

    def scaled_cov(self, a, b=0.0, c=0.0):
        """Per-sequence cell-mean covariance divided by sigma^2."""
        J = self.J
        ones = np.ones(J)
        x = self.x
        W = np.eye(J)[None] / self.K + a * np.ones((J, J))[None]
        if b or c:
            W = W + b * x[:, :, None] * x[:, None, :] \
                + c * (ones[None, :, None] * x[:, None, :] + x[:, :, None] * ones[None, None, :])
        return W

    def pieces(self, W):
        sign, logdet = np.linalg.slogdet(W)
        if np.any(sign <= 0):
            raise np.linalg.LinAlgError("cluster covariance is not positive definite")
        Winv = np.linalg.inv(W)
        WX = Winv @ self.X
        A = np.einsum("q,qjp,qjr->pr", self.n, self.X, WX)
        r = np.einsum("qjp,qj->p", WX, self.sum_y)
        cA = np.linalg.cholesky(A)
        coef = np.linalg.solve(cA.T, np.linalg.solve(cA, r))
        # residuals formed explicitly: trace-minus-fit cancels badly at small noise
        resid = self.Y - self.X[self.seq] @ coef
        if W.shape[0] == 1:
            quad = np.einsum("ij,jk,ik->", resid, Winv[0], resid)
            logdet = np.full(len(self.n), logdet[0])
        else:
            quad = np.einsum("ij,ijk,ik->", resid, Winv[self.seq], resid)
        quad += self.within_ss
        logdet_A = 2 * np.sum(np.log(np.diag(cA)))
        return quad, float(self.n @ logdet), logdet_A, A, r

    def profile(self, W, method):
        """Profiled log-likelihood and sigma^2 for a scaled covariance."""
        quad, logdet_W, logdet_A, _, _ = self.pieces(W)
        dof = self.N - self.p if method == "reml" else self.N
        sigma2 = max(quad / dof, np.finfo(float).tiny)
        ll = -0.5 * (dof * (_LOG_2PI + np.log(sigma2) + 1) + self.IJlogK + logdet_W)
        if method == "reml":
            ll -= 0.5 * logdet_A
        return ll, sigma2

    def loglik(self, W, sigma2, method):
        quad, logdet_W, logdet_A, _, _ = self.pieces(W)
        dof = self.N - self.p if method == "reml" else self.N
        ll = -0.5 * (dof * _LOG_2PI + dof * np.log(sigma2) + self.IJlogK + logdet_W + quad / sigma2)
        if method == "reml":
            ll -= 0.5 * logdet_A
        return ll


def _rte_params(v):
    a = v[0] ** 2
    b = v[1] ** 2
    rho = RHO_BOUND * np.tanh(v[2])
    return a, b, rho


def _optimize_intercept_only(prob, method, maxiter, tol):
    K = prob.K

    def neg(t):
        a = t / (K * (1 - t))
        return -prob.profile(prob.scaled_cov(a), method)[0]

    upper = 1 - 1e-9
    res = optimize.minimize_scalar(neg, bounds=(0.0, upper), method="bounded",
                                   options={"xatol": tol, "maxiter": maxiter})
    if not res.success:
        raise ConvergenceError(f"variance component search did not converge: {res.message}",
                               last_iterate={"phi": float(res.x)})
    t, f = float(res.x), float(res.fun)
    f0 = neg(0.0)
    if f0 <= f:
        t, f = 0.0, f0
    a = t / (K * (1 - t))
    return (a, 0.0, 0.0), int(res.nfev) + 1


def _optimize_rte(prob, method, maxiter, tol, start_a):
    def neg(v):
        a, b, rho = _rte_params(v)
        try:
            return -prob.profile(prob.scaled_cov(a, b, rho * np.sqrt(a * b)), method)[0]
        except np.linalg.LinAlgError:
            return np.inf

    best = None
    n_iter = 0
    scale = max(np.sqrt(start_a), 0.05)
    for v0 in ([scale, scale, 0.0], [scale, 0.5 * scale, -0.5]):
        res = optimize.minimize(neg, np.asarray(v0), method="Nelder-Mead",
                                options={"xatol": 1e-7, "fatol": tol * max(1.0, abs(neg(v0))),
                                         "maxiter": maxiter, "maxfev": 4 * maxiter})
        n_iter += int(res.nit)
        if best is None or res.fun < best.fun:
            best = res
    if not best.success:
        a, b, rho = _rte_params(best.x)
        raise ConvergenceError(f"variance component search did not converge: {best.message}",
                               last_iterate={"tau2_ratio": a, "nu2_ratio": b, "rho_re": rho})
    a, b, rho = _rte_params(best.x)
    return (a, b, rho), n_iter


def fit(data, spec: ModelSpec = ModelSpec(), method: str = "reml",
        maxiter: int = 500, tol: float = 1e-8) -> FittedModel:
    """Fit ``spec`` to ``data`` by REML (default) or ML.

    Raises ``EstimationError`` when a parameterized exposure time has no
    data and ``ConvergenceError`` when the optimizer runs out of iterations.
    """
    if method not in ("reml", "ml"):
        raise DomainError("method must be 'reml' or 'ml'")
    data = check_dataset(data)
    prob = _Problem(data.cells, spec)
    (a, _, _), n_iter = _optimize_intercept_only(prob, method, maxiter, tol)
    b = rho = 0.0
    if spec.random_treatment:
        (a, b, rho), extra = _optimize_rte(prob, method, maxiter, tol, a)
        n_iter += extra
    c = rho * np.sqrt(a * b)
    W = prob.scaled_cov(a, b, c)
    ll, sigma2 = prob.profile(W, method)
    _, _, _, A, r = prob.pieces(W)
    A_inv = np.linalg.inv(A)
    A_inv = 0.5 * (A_inv + A_inv.T)
    coef = A_inv @ r
    vcov = sigma2 * A_inv
    J = prob.J
    varcomp = VarianceComponents(tau2=a * sigma2, sigma2=sigma2, nu2=b * sigma2,
                                 rho_re=float(rho) if b > 0 and a > 0 else 0.0)
    return FittedModel(
        spec=spec,
        mu=float(coef[0]),
        period_effects=np.concatenate([[0.0], coef[1:J]]),
        theta_hat=coef[J:],
        vcov_theta=vcov[J:, J:],
        varcomp=varcomp,
        reml_value=float(ll),
        converged=True,
        n_iter=n_iter,
        curve_map=prob.L,
        method=method,
        basis=prob.basis,
        vcov_fixed=vcov,
    )


def reml_criterion(data, spec: ModelSpec, varcomp: VarianceComponents, method: str = "reml") -> float:
    """Restricted log-likelihood of ``spec`` at fixed variance components.

    With ``method='ml'`` the full log-likelihood at the GLS fixed effects is
    returned instead.
    """
    data = check_dataset(data)
    prob = _Problem(data.cells, spec)
    s2 = varcomp.sigma2
    c = varcomp.rho_re * np.sqrt(varcomp.tau2 * varcomp.nu2) / s2
    W = prob.scaled_cov(varcomp.tau2 / s2, varcomp.nu2 / s2, c)
    try:
        return float(prob.loglik(W, s2, method))
    except np.linalg.LinAlgError as exc:
        raise EstimationError(f"singular covariance: {exc}") from exc


@dataclass(frozen=True)
class LikelihoodRatioTest:
    statistic: float
    df: int
    p: float
    method: str = "ml"


def lrt_it_vs_eti(data, random_treatment: bool = False, **fit_kw) -> LikelihoodRatioTest:
    """Test the IT model against ETI using maximum likelihood fits."""
    data = check_dataset(data)
    it = fit(data, ModelSpec("IT", random_treatment=random_treatment), method="ml", **fit_kw)
    eti = fit(data, ModelSpec("ETI", random_treatment=random_treatment), method="ml", **fit_kw)
    stat = max(0.0, 2 * (eti.reml_value - it.reml_value))
    df = len(eti.theta_hat) - len(it.theta_hat)
    return LikelihoodRatioTest(stat, df, float(stats.chi2.sf(stat, df)))


def fitted_means(model: FittedModel, design) -> np.ndarray:
    """``Q x J`` marginal cell means implied by a fit."""
    exposure = design.exposure_matrix()
    treat = model.curve()[exposure]
    return model.mu + model.period_effects[None, :] + treat
