"""Scikit-learn style wrappers around the model fitting functions.

``X`` is a :class:`~swedge.datagen.TrialDataset` or a long-format
DataFrame with the trial CSV columns; ``y`` is ignored because the outcome
column travels with the design labels.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_dataset
from .estimands import Estimand, effect_curve_estimate, estimate
from .mec import McmcConfig, MecPrior, fit_mec, mec_curve, mec_estimands
from .models import ModelSpec, fit


def _as_estimand(value):
    return value if isinstance(value, Estimand) else Estimand.parse(value)


class EffectCurveModel(BaseEstimator):
    """Mixed model with an IT, ETI, RETI or NCS treatment term.

    Parameters
    ----------
    model : str
        ``"it"``, ``"eti"``, ``"reti:S"`` or ``"ncs:D"``.
    random_treatment : bool
        Add a cluster random treatment effect correlated with the intercept.
    ci_level : float
        Confidence level for Wald intervals.
    method : str
        ``"reml"`` or ``"ml"``.
    """

    def __init__(self, model="eti", random_treatment=False, ci_level=0.95, method="reml"):
        self.model = model
        self.random_treatment = random_treatment
        self.ci_level = ci_level
        self.method = method

    def fit(self, X, y=None):
        data = check_dataset(X)
        spec = ModelSpec.parse(self.model, self.random_treatment, self.ci_level)
        self.fitted_ = fit(data, spec, method=self.method)
        self.theta_ = self.fitted_.theta_hat
        self.vcov_ = self.fitted_.vcov_theta
        self.varcomp_ = self.fitted_.varcomp
        self.max_exposure_ = self.fitted_.max_exposure
        return self

    def predict(self, X):
        """Fitted marginal mean for every row of ``X``."""
        check_is_fitted(self, "fitted_")
        data = check_dataset(X)
        fm = self.fitted_
        curve = fm.curve_map @ fm.theta_hat
        if data.exposure.max() > fm.max_exposure:
            curve = np.concatenate([curve, np.repeat(curve[-1], data.exposure.max() - fm.max_exposure)])
        return fm.mu + fm.period_effects[data.period - 1] + curve[data.exposure]

    def estimate(self, estimand="lte", method="right"):
        check_is_fitted(self, "fitted_")
        return estimate(self.fitted_, _as_estimand(estimand), method)

    def effect_curve(self):
        check_is_fitted(self, "fitted_")
        return effect_curve_estimate(self.fitted_)


class MonotoneEffectCurveModel(BaseEstimator):
    """Bayesian monotone effect curve model.

    ``prior`` holds the Dirichlet constants; ``None`` puts 5 on the first
    half of exposure times and 1 on the rest.
    """

    def __init__(self, prior=None, n_chains=4, n_warmup=2500, n_samples=2500, seed=0,
                 ci_level=0.95):
        self.prior = prior
        self.n_chains = n_chains
        self.n_warmup = n_warmup
        self.n_samples = n_samples
        self.seed = seed
        self.ci_level = ci_level

    def fit(self, X, y=None):
        data = check_dataset(X)
        prior = None if self.prior is None else (
            self.prior if isinstance(self.prior, MecPrior) else MecPrior(tuple(self.prior)))
        cfg = McmcConfig(self.n_chains, self.n_warmup, self.n_samples, self.seed)
        self.draws_ = fit_mec(data, prior, cfg, self.ci_level)
        self.rhat_ = self.draws_.rhat
        self.acceptance_ = self.draws_.acceptance
        self.max_exposure_ = self.draws_.S
        return self

    def estimate(self, estimand="lte", method="right"):
        check_is_fitted(self, "draws_")
        return mec_estimands(self.draws_, _as_estimand(estimand), method=method)

    def effect_curve(self):
        check_is_fitted(self, "draws_")
        return mec_curve(self.draws_)
