import warnings

import numpy as np
import pytest
from scipy import stats

from swedge.datagen import EffectCurve, GenParams, canonical_curve, generate
from swedge.design import StudyDesign
from swedge.estimands import Estimand
from swedge.exceptions import DomainError
from swedge.mec import (McmcConfig, MecDraws, MecLikelihood, MecPrior, fit_mec, log_posterior,
                        mec_curve, mec_estimands, split_rhat)

from conftest import BASE

SMALL = StudyDesign(3, 2, 3)
QUICK = McmcConfig(n_chains=2, n_warmup=600, n_samples=400, seed=9)


@pytest.fixture(scope="module")
def small_mec_data():
    return generate(SMALL, EffectCurve((0.3, 0.7, 1.0)), GenParams(delta=0.8, sigma=1.0, tau=0.7), 4)


def _mvn_restricted_loglik(data, delta, alpha, sigma, tau):
    """Per-cluster multivariate normal densities with period means profiled and integrated."""
    J = data.design.num_periods
    H = np.r_[0.0, np.cumsum(alpha)]
    A = np.zeros((J, J))
    b = np.zeros(J)
    blocks = []
    for i in np.unique(data.cluster):
        m = data.cluster == i
        X = np.eye(J)[data.period[m] - 1]
        r = data.outcome[m] - delta * H[data.exposure[m]]
        V = sigma ** 2 * np.eye(m.sum()) + tau ** 2
        Vi = np.linalg.inv(V)
        A += X.T @ Vi @ X
        b += X.T @ Vi @ r
        blocks.append((X, r, V))
    beta = np.linalg.solve(A, b)
    ll = sum(stats.multivariate_normal.logpdf(r - X @ beta, cov=V) for X, r, V in blocks)
    return ll + 0.5 * J * np.log(2 * np.pi) - 0.5 * np.linalg.slogdet(A)[1]


def _oracle_log_prior(delta, omega, alpha, sigma, tau, prior):
    return (stats.norm.logpdf(delta, scale=prior.delta_prior_sd)
            + stats.uniform.logpdf(omega, *(prior.omega_bounds[0], np.diff(prior.omega_bounds)[0]))
            + stats.dirichlet.logpdf(alpha, omega * np.asarray(prior.c))
            + stats.halfnorm.logpdf(sigma, scale=prior.sd_prior_scale)
            + stats.halfnorm.logpdf(tau, scale=prior.sd_prior_scale))


def test_log_posterior_matches_mvn_oracle(small_mec_data):
    rng = np.random.default_rng(0)
    prior = MecPrior((5.0, 1.0, 1.0))
    for _ in range(10):
        p = dict(delta=rng.normal(0, 1), omega=rng.uniform(0.05, 20), alpha=rng.dirichlet(np.ones(3)),
                 sigma=rng.uniform(0.3, 2), tau=rng.uniform(0.05, 1.5))
        expected = _mvn_restricted_loglik(small_mec_data, p["delta"], p["alpha"], p["sigma"], p["tau"]) \
            + _oracle_log_prior(p["delta"], p["omega"], p["alpha"], p["sigma"], p["tau"], prior)
        assert log_posterior(p, small_mec_data, prior) == pytest.approx(expected, rel=1e-10, abs=1e-8)


def test_zero_effect_is_no_treatment_likelihood(small_mec_data):
    lik = MecLikelihood(small_mec_data.cells)
    alpha = np.full(3, 1 / 3)
    expected = _mvn_restricted_loglik(small_mec_data, 0.0, alpha, 1.2, 0.4)
    assert lik(np.zeros(3), 0.16, 1.44) == pytest.approx(expected, rel=1e-10)
    # the curve shape is irrelevant when delta is zero
    assert lik(0.0 * np.cumsum([0.9, 0.05, 0.05]), 0.16, 1.44) == lik(np.zeros(3), 0.16, 1.44)


def test_symmetric_prior_relabeling(small_mec_data):
    prior = MecPrior.symmetric(3)
    lik = MecLikelihood(small_mec_data.cells)
    alpha = np.array([0.6, 0.3, 0.1])
    base = dict(delta=0.7, omega=2.0, sigma=1.0, tau=0.5)

    def prior_part(a):
        return log_posterior({**base, "alpha": a}, small_mec_data, prior) \
            - lik(0.7 * np.cumsum(a), 0.25, 1.0)

    assert prior_part(alpha) == pytest.approx(prior_part(alpha[::-1]), abs=1e-10)
    assert prior_part(alpha) == pytest.approx(prior_part(alpha[[1, 2, 0]]), abs=1e-10)


def test_outside_support_is_minus_inf(small_mec_data):
    prior = MecPrior.symmetric(3)
    good = dict(delta=0.5, omega=1.0, alpha=[0.2, 0.3, 0.5], sigma=1.0, tau=0.5)
    assert np.isfinite(log_posterior(good, small_mec_data, prior))
    for key, val in [("omega", 0.001), ("omega", 101.0), ("sigma", 0.0), ("tau", -0.1),
                     ("alpha", [0.5, 0.6, -0.1]), ("alpha", [0.2, 0.3, 0.6])]:
        assert log_posterior({**good, key: val}, small_mec_data, prior) == -np.inf
    with pytest.raises(DomainError):
        log_posterior({**good, "alpha": [0.5, 0.5]}, small_mec_data, prior)


def test_prior_validation():
    with pytest.raises(DomainError):
        MecPrior((1.0, 0.0))
    with pytest.raises(DomainError):
        MecPrior((1.0,), omega_bounds=(1.0, 0.5))
    assert MecPrior.informative(6).c == (5.0, 5.0, 5.0, 1.0, 1.0, 1.0)


def test_split_rhat():
    rng = np.random.default_rng(1)
    assert split_rhat(rng.normal(size=(4, 2000))) == pytest.approx(1.0, abs=0.01)
    shifted = rng.normal(size=(4, 500)) + np.arange(4)[:, None]
    assert split_rhat(shifted) > 1.5
    assert split_rhat(np.ones((2, 10))) == 1.0


@pytest.fixture(scope="module")
def quick_draws(small_mec_data):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return fit_mec(small_mec_data, MecPrior((5.0, 1.0, 1.0)), QUICK)


def test_same_seed_same_draws(small_mec_data, quick_draws):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        again = fit_mec(small_mec_data, MecPrior((5.0, 1.0, 1.0)), QUICK)
        other = fit_mec(small_mec_data, MecPrior((5.0, 1.0, 1.0)),
                        McmcConfig(n_chains=2, n_warmup=600, n_samples=400, seed=10))
    for name in ("delta", "omega", "alpha", "sigma", "tau"):
        assert np.array_equal(getattr(again, name), getattr(quick_draws, name))
    assert not np.array_equal(other.delta, quick_draws.delta)


def test_draw_invariants(quick_draws):
    d = quick_draws
    assert d.delta.shape == (2, 400) and d.alpha.shape == (2, 400, 3)
    assert np.all(d.alpha >= 0)
    assert np.allclose(d.alpha.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all((d.omega >= 0.01) & (d.omega <= 100))
    assert np.all(d.sigma > 0) and np.all(d.tau >= 0)
    steps = np.diff(d.curves(), axis=1) * np.sign(d.flat("delta"))[:, None]
    assert np.all(steps >= -1e-12)
    assert set(d.rhat) >= {"delta", "omega", "sigma", "tau", "alpha1"}
    acc = np.concatenate([v for v in d.acceptance.values()])
    assert np.all((acc > 0) & (acc < 1))


def test_noiseless_recovery():
    curve = canonical_curve("c")
    data = generate(BASE, curve, GenParams(sigma=1e-3, tau=0.01), 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        d = fit_mec(data, mcmc=McmcConfig(n_chains=2, n_warmup=1500, n_samples=1000, seed=5))
    truth = 0.5 * np.r_[0.0, curve.values]
    assert np.max(np.abs(d.curves().mean(axis=0) - truth)) < 0.05
    assert d.flat("delta").mean() == pytest.approx(0.5, rel=0.05)
    rows = mec_curve(d)
    assert [r[0] for r in rows] == list(range(1, 7))
    assert all(lo <= est <= hi for _, est, lo, hi in rows)


def _constant_draws(delta, alpha, n=50):
    S = len(alpha)
    cfg = McmcConfig(n_chains=1, n_warmup=0, n_samples=n)
    return MecDraws(np.full((1, n), delta), np.ones((1, n)), np.tile(alpha, (1, n, 1)),
                    np.ones((1, n)), np.ones((1, n)), cfg, MecPrior.symmetric(S))


def test_estimands_on_fixed_draws():
    d = _constant_draws(1.0, np.r_[1.0, np.zeros(5)])
    for e in (Estimand.tate(0, 6), Estimand.lte(), Estimand.pte(2)):
        est = mec_estimands(d, e)
        assert est.estimate == pytest.approx(1.0)
        assert est.ci == pytest.approx((1.0, 1.0)) and est.se == 0.0
    d = _constant_draws(0.6, np.full(6, 1 / 6))
    assert mec_estimands(d, Estimand.pte(3)).estimate == pytest.approx(0.3)
    assert mec_estimands(d, Estimand.lte()).estimate == pytest.approx(0.6)
    with pytest.raises(DomainError):
        mec_estimands(d, Estimand.pte(7))


def test_prior_size_mismatch(small_mec_data):
    with pytest.raises(DomainError):
        fit_mec(small_mec_data, MecPrior.symmetric(6), QUICK)


def _batch_mcse(x, n_batches=50):
    means = x.reshape(x.shape[0], n_batches, -1).mean(axis=2)
    return means.std(ddof=1) / np.sqrt(means.size)


@pytest.mark.slow
def test_prior_sensitivity_on_curve_d(base_data):
    """The symmetric prior moves the LTE posterior mean upward, well beyond MC error."""
    out = {}
    for name, prior in (("informative", MecPrior.informative(6)), ("symmetric", MecPrior.symmetric(6))):
        d = fit_mec(base_data, prior, McmcConfig(seed=1))
        out[name] = (mec_estimands(d, Estimand.lte()).estimate, _batch_mcse(d.delta))
    (inf_mean, inf_se), (sym_mean, sym_se) = out["informative"], out["symmetric"]
    assert sym_mean > inf_mean
    assert sym_mean - inf_mean > 2 * np.hypot(inf_se, sym_se)
