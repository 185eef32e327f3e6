"""Monotone effect curve model fit by MCMC.

The treatment effect at exposure time ``s`` is ``delta * (alpha_1 + ... +
alpha_s)`` with ``alpha`` on the simplex, so every curve the model can
express is a monotone step function reaching ``delta`` at the largest
exposure time. Priors:

    delta ~ Normal(0, 100^2)
    omega ~ Uniform(0.01, 100)
    alpha ~ Dirichlet(c_1 * omega, ..., c_S * omega)
    sigma, tau ~ half-Normal(0, 10^2)

Period effects get a flat prior and cluster intercepts are normal; both
are integrated out analytically, so the sampler only visits
``(delta, omega, alpha, sigma, tau)``. Sampling is Metropolis-within-Gibbs
on unconstrained coordinates (logit for omega, additive log-ratio for the
simplex, log for the standard deviations) with an exact conditional draw
for ``delta``, whose full conditional is normal. From the middle of
warmup a joint move over all unconstrained coordinates, shaped by their
warmup covariance, is added to each sweep to cope with the strong
correlation between ``omega`` and the simplex. Proposal scales adapt
toward 30% acceptance during warmup and are frozen afterwards.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

from ._validation import check_dataset
from .datagen import CellSummary
from .estimands import Estimand, EstimandEstimate, riemann_weights
from .exceptions import DomainError, EstimationError

_LOG_2PI = np.log(2 * np.pi)
OMEGA_BOUNDS = (0.01, 100.0)
TARGET_ACCEPT = 0.3


@dataclass(frozen=True)
class MecPrior:
    c: tuple
    delta_prior_sd: float = 100.0
    omega_bounds: tuple = OMEGA_BOUNDS
    sd_prior_scale: float = 10.0

    def __post_init__(self):
        c = tuple(float(v) for v in self.c)
        if not c or any(v <= 0 for v in c):
            raise DomainError("Dirichlet constants must all be positive")
        object.__setattr__(self, "c", c)
        lo, hi = self.omega_bounds
        if not 0 < lo < hi:
            raise DomainError("omega bounds must satisfy 0 < lo < hi")

    @classmethod
    def informative(cls, S: int, big: float = 5.0) -> "MecPrior":
        """Larger constants on the first half of exposure times."""
        half = S // 2
        return cls((big,) * half + (1.0,) * (S - half))

    @classmethod
    def symmetric(cls, S: int) -> "MecPrior":
        return cls((1.0,) * S)

    @property
    def S(self) -> int:
        return len(self.c)


@dataclass(frozen=True)
class McmcConfig:
    n_chains: int = 4
    n_warmup: int = 2500
    n_samples: int = 2500
    seed: int = 0
    adapt_batch: int = 50


@dataclass(frozen=True, eq=False)
class MecDraws:
    """Post-warmup draws, shaped ``(n_chains, n_samples[, S])``."""

    delta: np.ndarray
    omega: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray
    tau: np.ndarray
    config: McmcConfig
    prior: MecPrior
    acceptance: dict = field(default_factory=dict)
    rhat: dict = field(default_factory=dict)
    warnings: tuple = ()
    ci_level: float = 0.95

    @property
    def S(self) -> int:
        return self.alpha.shape[-1]

    def flat(self, name):
        arr = getattr(self, name)
        return arr.reshape(-1, *arr.shape[2:])

    def curves(self) -> np.ndarray:
        """Per-draw point effects at exposure times ``0..S``, shape ``(draws, S+1)``."""
        cum = np.cumsum(self.flat("alpha"), axis=1)
        return self.flat("delta")[:, None] * np.hstack([np.zeros((cum.shape[0], 1)), cum])


class MecLikelihood:
    """Integrated likelihood as a quadratic in the treatment offsets.

    With ``v[s-1] = delta * H(s)`` the residual quadratic form is
    ``K * (q1(v) - g * q2(v)) + SSW`` where ``q1`` and ``q2`` are fixed
    quadratics precomputed from the cluster-period means.
    """

    def __init__(self, cells: CellSummary):
        d = cells.design
        self.K = d.cluster_size
        self.J = d.num_periods
        self.S = d.max_exposure
        Y = cells.means
        self.I = Y.shape[0]
        self.N = cells.n_obs
        exposure = d.exposure_matrix()[cells.cluster_sequence - 1]  # I x J
        if not np.any(exposure > 0):
            raise EstimationError("no treated observations")
        P = (exposure[:, :, None] == np.arange(1, self.S + 1)[None, None, :]).astype(float)
        C = Y - Y.mean(axis=0)
        D = P - P.mean(axis=0)
        self.A0 = float(np.sum(C * C))
        self.b1 = np.einsum("ijs,ij->s", D, C)
        self.C1 = np.einsum("ijs,ijt->st", D, D)
        u = C.sum(axis=1)
        m = D.sum(axis=1)  # I x S
        self.A2 = float(u @ u)
        self.b2 = m.T @ u
        self.C2 = m.T @ m
        self.within_ss = cells.within_ss
        J, K, I = self.J, self.K, self.I
        self._const = (self.N - J) * _LOG_2PI + I * J * np.log(K) + J * np.log(I) \
            - (I - 1) * J * np.log(K)

    def __call__(self, v, tau2, sigma2):
        """Log-likelihood; broadcasts over leading axes of ``v``."""
        v = np.asarray(v, dtype=float)
        a = np.asarray(tau2) / np.asarray(sigma2)
        J, K = self.J, self.K
        g = K * a / (1 + J * K * a)
        q1 = self.A0 - 2 * v @ self.b1 + np.einsum("...s,st,...t->...", v, self.C1, v)
        q2 = self.A2 - 2 * v @ self.b2 + np.einsum("...s,st,...t->...", v, self.C2, v)
        quad = K * (q1 - g * q2) + self.within_ss
        return -0.5 * (self._const + (self.N - J) * np.log(sigma2)
                       + (self.I - 1) * np.log1p(J * K * a) + quad / sigma2)

    def delta_conditional(self, H, tau2, sigma2, prior_var):
        """Mean and sd of delta given the curve shape ``H`` (per chain)."""
        a = tau2 / sigma2
        g = self.K * a / (1 + self.J * self.K * a)
        HC1H = np.einsum("cs,st,ct->c", H, self.C1, H)
        HC2H = np.einsum("cs,st,ct->c", H, self.C2, H)
        prec = self.K * (HC1H - g * HC2H) / sigma2 + 1.0 / prior_var
        lin = self.K * (H @ self.b1 - g * (H @ self.b2)) / sigma2
        return lin / prec, 1.0 / np.sqrt(prec)


def _log_dirichlet(log_alpha, conc):
    return special.gammaln(conc.sum(-1)) - special.gammaln(conc).sum(-1) \
        + np.sum((conc - 1) * log_alpha, axis=-1)


def _log_prior(delta, omega, log_alpha, sigma, tau, prior: MecPrior):
    """Normalized log prior density (the sampler drops the constants)."""
    c = np.asarray(prior.c)
    conc = np.asarray(omega)[..., None] * c
    s2 = prior.sd_prior_scale ** 2
    d2 = prior.delta_prior_sd ** 2
    lo, hi = prior.omega_bounds
    half_normal = 2 * (np.log(2) - 0.5 * np.log(2 * np.pi * s2))
    return (-0.5 * np.asarray(delta) ** 2 / d2 - 0.5 * np.log(2 * np.pi * d2)
            + _log_dirichlet(log_alpha, conc) - np.log(hi - lo)
            - 0.5 * (np.asarray(sigma) ** 2 + np.asarray(tau) ** 2) / s2 + half_normal)


def log_posterior(params: dict, data, prior: MecPrior) -> float:
    """Unnormalized log posterior at natural parameters.

    ``params`` holds ``delta``, ``omega``, ``alpha`` (length S), ``sigma``
    and ``tau``. Points outside the support give ``-inf``.
    """
    data = check_dataset(data)
    alpha = np.asarray(params["alpha"], dtype=float)
    delta, omega = float(params["delta"]), float(params["omega"])
    sigma, tau = float(params["sigma"]), float(params["tau"])
    lo, hi = prior.omega_bounds
    if alpha.shape != (prior.S,):
        raise DomainError(f"alpha must have {prior.S} entries")
    if (np.any(alpha < 0) or abs(alpha.sum() - 1) > 1e-12 or not lo <= omega <= hi
            or sigma <= 0 or tau < 0):
        return -np.inf
    lik = MecLikelihood(data.cells)
    if lik.S != prior.S:
        raise DomainError(f"prior has {prior.S} constants; data have {lik.S} exposure times")
    with np.errstate(divide="ignore"):
        log_alpha = np.log(alpha)
    v = delta * np.cumsum(alpha)
    lp = _log_prior(delta, omega, log_alpha, sigma, tau, prior)
    if not np.isfinite(lp):
        return -np.inf
    return float(lik(v, tau ** 2, sigma ** 2) + lp)


def split_rhat(x: np.ndarray) -> float:
    """Split-chain potential scale reduction for ``(n_chains, n_draws)``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[1] // 2
    if n < 2:
        return float("nan")
    halves = np.concatenate([x[:, :n], x[:, -n:]], axis=0)
    means = halves.mean(axis=1)
    W = halves.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _run_chains(lik: MecLikelihood, prior: MecPrior, cfg: McmcConfig, init):
    """Run each chain from its own ``SeedSequence(seed).spawn`` child."""
    from ._mec_kernel import run_chain

    S = lik.S
    lo, hi = prior.omega_bounds
    stats = np.concatenate([
        [lik.A0, lik.A2, lik.within_ss, lik.K, lik.J, lik.I, lik.N, lik._const],
        lik.b1, lik.b2, lik.C1.ravel(), lik.C2.ravel(),
    ]).astype(float)
    prior_vec = np.array([prior.delta_prior_sd ** 2, prior.sd_prior_scale ** 2, lo, hi])
    c = np.asarray(prior.c, dtype=float)
    _, sigma0, tau0 = init
    n_iter = cfg.n_warmup + cfg.n_samples
    nb = S + 2  # S-1 log-ratio coordinates, omega, log sigma, log tau
    t1 = (1.0 - lo) / (hi - lo)
    u_start = np.log(t1) - np.log1p(-t1)
    scale0 = np.log(np.r_[np.full(S - 1, 0.5), 0.5, 0.02, 0.3])
    out = {k: [] for k in ("delta", "omega", "alpha", "sigma", "tau")}
    acc = []
    for ss in np.random.SeedSequence(int(cfg.seed)).spawn(cfg.n_chains):
        rng = np.random.default_rng(ss)
        jitter = rng.standard_normal(S + 2)
        z = rng.standard_normal((n_iter, 2 * nb + 1))
        logu = np.log(rng.random((n_iter, nb + 1)))
        res = run_chain(stats, c, prior_vec, z, logu, 0.3 * jitter[: S - 1],
                        u_start + 0.3 * jitter[S - 1], np.log(sigma0) + 0.02 * jitter[S],
                        np.log(max(tau0, 1e-2)) + 0.3 * jitter[S + 1], scale0,
                        cfg.n_warmup, cfg.adapt_batch, TARGET_ACCEPT)
        for key, arr in zip(("delta", "omega", "alpha", "sigma", "tau"), res[:5]):
            out[key].append(arr)
        acc.append(res[5])
    out = {k: np.stack(v) for k, v in out.items()}
    acc = np.stack(acc)
    names = [f"alpha_alr{t + 1}" for t in range(S - 1)] + ["omega", "sigma", "tau", "joint"]
    acceptance = {n: acc[:, i].tolist() for i, n in enumerate(names)}
    return out, acceptance


def _initial_values(cells: CellSummary):
    d = cells.design
    df_within = cells.n_obs - cells.means.size
    if df_within > 0:
        sigma = np.sqrt(cells.within_ss / df_within)
    else:
        sigma = float(np.std(cells.means - cells.means.mean(axis=0)))
    resid = cells.means - cells.means.mean(axis=0)
    tau2 = max(np.var(resid.mean(axis=1)) - sigma ** 2 / (d.cluster_size * d.num_periods), 1e-4)
    return 0.0, max(sigma, 1e-8), np.sqrt(tau2)


def fit_mec(data, prior: Optional[MecPrior] = None, mcmc: McmcConfig = McmcConfig(),
            ci_level: float = 0.95) -> MecDraws:
    """Sample the monotone effect curve posterior."""
    data = check_dataset(data)
    cells = data.cells
    lik = MecLikelihood(cells)
    if prior is None:
        prior = MecPrior.informative(lik.S)
    if prior.S != lik.S:
        raise DomainError(f"prior has {prior.S} constants; data have {lik.S} exposure times")
    if mcmc.n_chains < 1 or mcmc.n_samples < 1 or mcmc.n_warmup < 0:
        raise DomainError("need at least one chain and one retained draw")
    out, acceptance = _run_chains(lik, prior, mcmc, _initial_values(cells))
    rhat = {"delta": split_rhat(out["delta"]), "omega": split_rhat(out["omega"]),
            "sigma": split_rhat(out["sigma"]), "tau": split_rhat(out["tau"])}
    for t in range(lik.S):
        rhat[f"alpha{t + 1}"] = split_rhat(out["alpha"][:, :, t])
    notes = []
    if mcmc.n_chains > 1 and not rhat["delta"] <= 1.1:
        msg = f"split R-hat for delta is {rhat['delta']:.3f} (> 1.1)"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return MecDraws(out["delta"], out["omega"], out["alpha"], out["sigma"], out["tau"],
                    mcmc, prior, acceptance, rhat, tuple(notes), ci_level)


def mec_estimands(draws: MecDraws, estimand: Estimand, level: Optional[float] = None,
                  method: str = "right") -> EstimandEstimate:
    """Posterior summary of a TATE, PTE or LTE.

    The point estimate is built from posterior means (``delta_hat *
    cumsum(alpha_hat)``); the interval is the equal-tailed credible
    interval of the same quantity computed draw by draw and ``se`` is its
    posterior standard deviation.
    """
    level = draws.ci_level if level is None else level
    S = draws.S
    if estimand.kind == "TATE":
        if estimand.s2 > S:
            raise DomainError(f"s2={estimand.s2} is beyond the maximum exposure time {S}")
        w = np.zeros(S + 1)
        w[: estimand.s2 + 1] = riemann_weights(estimand.s1, estimand.s2, method)
    else:
        s0 = S if estimand.kind == "LTE" else estimand.s0
        if s0 > S:
            raise DomainError(f"s0={s0} is beyond the maximum exposure time {S}")
        w = np.zeros(S + 1)
        w[s0] = 1.0
    per_draw = draws.curves() @ w
    d_hat = draws.flat("delta").mean()
    a_hat = draws.flat("alpha").mean(axis=0)
    curve_hat = d_hat * np.concatenate([[0.0], np.cumsum(a_hat)])
    value = float(curve_hat @ w)
    tail = (1 - level) / 2
    lo, hi = np.quantile(per_draw, [tail, 1 - tail])
    se = float(per_draw.std(ddof=1)) if per_draw.size > 1 else 0.0
    if se > 0:
        z = value / se
        p = float(2 * stats.norm.sf(abs(z)))
    else:
        z, p = (0.0, 1.0) if value == 0 else (float(np.sign(value) * np.inf), 0.0)
    return EstimandEstimate(estimand.label, method, value, se, (float(lo), float(hi)), float(z), p)


def mec_curve(draws: MecDraws, level: Optional[float] = None):
    """Posterior-mean curve with pointwise credible intervals at ``1..S``."""
    return [
        (s, e.estimate, e.ci[0], e.ci[1])
        for s in range(1, draws.S + 1)
        for e in [mec_estimands(draws, Estimand.pte(s), level)]
    ]
