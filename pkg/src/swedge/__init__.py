"""Exposure-time treatment effect models for stepped wedge trials."""
from .datagen import (EffectCurve, GenParams, TrialDataset, canonical_curve, generate,
                      replicate_seed)
from .design import StudyDesign, derive_phi, exposure_time, treatment_indicator
from .estimands import Estimand, EstimandEstimate, contrast, effect_curve_estimate, estimate
from .estimators import EffectCurveModel, MonotoneEffectCurveModel
from .exceptions import ConvergenceError, DomainError, EstimationError
from .mec import McmcConfig, MecDraws, MecPrior, fit_mec, log_posterior, mec_estimands
from .models import FittedModel, ModelSpec, VarianceComponents, fit, lrt_it_vs_eti, reml_criterion
from .simharness import SimResult, SimScenario, metrics, run_scenario, scenario_catalog
from .spline import SplineBasis, build_basis
from .weights import (CorrelationSpec, WeightProfile, expected_it_estimate, numeric_weights,
                      weight, weight_profile)

__version__ = "0.1.0"
