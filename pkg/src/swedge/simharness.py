"""Monte Carlo simulation studies of effect curve estimators.

A :class:`SimScenario` fixes a design, a true curve, the data generating
parameters, the models to fit and the estimands to report. Replicate ``r``
draws its data from ``SeedSequence(seed, spawn_key=(r,))`` and any MCMC
from ``SeedSequence(seed, spawn_key=(r, 1))``, so results do not depend on
how replicates are spread over workers.
"""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd

from .datagen import EffectCurve, GenParams, canonical_curve, generate, replicate_seed
from .design import StudyDesign
from .estimands import Estimand, estimate, riemann_weights
from .exceptions import DomainError, EstimationError
from .mec import McmcConfig, MecPrior, fit_mec, mec_estimands
from .models import ModelSpec, fit

RESULT_COLUMNS = ("scenario", "curve", "model", "estimand", "bias", "bias_mcse", "coverage",
                  "mse", "power", "avg_pointwise_mse", "n_fail")
ALPHA = 0.05


@dataclass(frozen=True)
class MecModel:
    """Selector for the Bayesian monotone model inside a scenario."""

    prior: str = "informative"  # or "symmetric"

    @property
    def label(self) -> str:
        return "MEC" if self.prior == "informative" else "MEC-sym"

    def make_prior(self, S: int) -> MecPrior:
        return MecPrior.symmetric(S) if self.prior == "symmetric" else MecPrior.informative(S)


def parse_model(token: str):
    """``it``, ``eti``, ``reti:S``, ``ncs:D`` (``+rte`` suffix allowed) or ``mec[:symmetric]``."""
    token = token.strip().lower()
    if token.startswith("mec"):
        _, _, arg = token.partition(":")
        if arg in ("", "informative"):
            return MecModel("informative")
        if arg in ("sym", "symmetric"):
            return MecModel("symmetric")
        raise DomainError(f"bad MEC prior {arg!r}; use informative or symmetric")
    base, plus, suffix = token.partition("+")
    if plus and suffix != "rte":
        raise DomainError(f"bad model suffix in {token!r}; only +rte is allowed")
    return ModelSpec.parse(base, random_treatment=bool(plus))


@dataclass(frozen=True)
class SimScenario:
    name: str
    design: StudyDesign
    curve: EffectCurve
    params: GenParams = GenParams()
    models: tuple = ("it", "eti")
    estimands: tuple = (Estimand.tate(0, 6), Estimand.lte())
    replicates: int = 500
    seed: int = 1
    mcmc: McmcConfig = McmcConfig()

    def __post_init__(self):
        if int(self.replicates) < 1:
            raise DomainError("replicates must be >= 1")
        if self.curve.max_exposure < self.design.max_exposure:
            object.__setattr__(self, "curve", self.curve.extend(self.design.max_exposure))
        object.__setattr__(self, "estimands", tuple(
            e if isinstance(e, Estimand) else Estimand.parse(e) for e in self.estimands))
        for token in self.models:
            parse_model(token)

    def truth_curve(self) -> np.ndarray:
        """True point effects at exposure times ``0..S``."""
        S = self.design.max_exposure
        return self.params.delta * self.curve.at(np.arange(S + 1))

    def truth(self, estimand: Estimand) -> float:
        """Exact estimand value for the step-function truth."""
        psi = self.truth_curve()
        S = len(psi) - 1
        if estimand.kind == "TATE":
            if estimand.s2 > S:
                raise DomainError(f"s2={estimand.s2} is beyond the design's maximum exposure {S}")
            return float(riemann_weights(estimand.s1, estimand.s2, "right") @ psi[: estimand.s2 + 1])
        s0 = S if estimand.kind == "LTE" else estimand.s0
        if s0 > S:
            raise DomainError(f"s0={s0} is beyond the design's maximum exposure {S}")
        return float(psi[s0])


@dataclass(frozen=True)
class Metrics:
    n: int
    mean: float
    bias: float
    coverage: float
    mse: float
    power: float
    bias_mcse: float
    coverage_mcse: float
    mse_mcse: float


def metrics(estimates, truth: float) -> Metrics:
    """Bias, interval coverage, MSE and rejection rate with Monte Carlo SEs."""
    estimates = list(estimates)
    if not estimates:
        raise DomainError("metrics needs at least one estimate")
    est = np.array([e.estimate for e in estimates], dtype=float)
    lo = np.array([e.ci[0] for e in estimates], dtype=float)
    hi = np.array([e.ci[1] for e in estimates], dtype=float)
    p = np.array([e.p for e in estimates], dtype=float)
    n = len(est)
    err = est - truth
    covered = (lo <= truth) & (truth <= hi)
    sq = err ** 2
    coverage = float(covered.mean())
    ddof = 1 if n > 1 else 0
    return Metrics(
        n=n,
        mean=float(est.mean()),
        bias=float(err.mean()),
        coverage=coverage,
        mse=float(sq.mean()),
        power=float(np.mean(p < ALPHA)),
        bias_mcse=float(est.std(ddof=ddof) / np.sqrt(n)),
        coverage_mcse=float(np.sqrt(coverage * (1 - coverage) / n)),
        mse_mcse=float(sq.std(ddof=ddof) / np.sqrt(n)),
    )


def _mec_seed(seed: int, replicate: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replicate), 1))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _fit_one(scenario: SimScenario, model, data, replicate: int):
    """Estimates for every estimand and the fitted curve at ``0..S``."""
    if isinstance(model, MecModel):
        cfg = replace(scenario.mcmc, seed=_mec_seed(scenario.seed, replicate))
        with warnings.catch_warnings():
            # convergence notes stay attached to the draws; replicates run unattended
            warnings.simplefilter("ignore", RuntimeWarning)
            draws = fit_mec(data, model.make_prior(scenario.design.max_exposure), cfg)
        ests = [mec_estimands(draws, e) for e in scenario.estimands]
        d_hat = draws.flat("delta").mean()
        curve = d_hat * np.concatenate([[0.0], np.cumsum(draws.flat("alpha").mean(axis=0))])
        return ests, curve
    fm = fit(data, model)
    return [estimate(fm, e) for e in scenario.estimands], fm.curve()


def run_replicate(scenario: SimScenario, replicate: int) -> list:
    """Flat records for one replicate; failed fits are recorded, not raised."""
    data = generate(scenario.design, scenario.curve, scenario.params,
                    replicate_seed(scenario.seed, replicate))
    truth = scenario.truth_curve()
    records = []
    for token in scenario.models:
        model = parse_model(token)
        label = model.label
        try:
            ests, curve = _fit_one(scenario, model, data, replicate)
        except (EstimationError, np.linalg.LinAlgError) as exc:
            records.append(dict(replicate=replicate, model=label, failed=True, error=str(exc)))
            continue
        pw = float(np.mean((curve[1:] - truth[1:]) ** 2))
        for est in ests:
            records.append(dict(replicate=replicate, model=label, failed=False,
                                estimand=est.kind, estimate=est.estimate, se=est.se,
                                ci_lo=est.ci[0], ci_hi=est.ci[1], p=est.p, pointwise_mse=pw))
    return records


def _run_chunk(args):
    scenario, reps = args
    return [rec for r in reps for rec in run_replicate(scenario, r)]


@dataclass(frozen=True, eq=False)
class SimResult:
    scenario: SimScenario
    summary: pd.DataFrame
    metrics: dict = field(repr=False)  # (model, estimand) -> Metrics
    records: Optional[pd.DataFrame] = field(default=None, repr=False)

    def get(self, model: str, estimand: str) -> Metrics:
        return self.metrics[(model, estimand)]

    def to_csv(self, path_or_buf=None):
        return self.summary.to_csv(path_or_buf, index=False, float_format="%.12g")


def _summarize(scenario: SimScenario, records: list) -> SimResult:
    frame = pd.DataFrame(records)
    rows, table = [], {}
    for token in scenario.models:
        label = parse_model(token).label
        sub = frame[frame["model"] == label]
        failed = sub[sub["failed"]]["replicate"].nunique()
        ok = sub[~sub["failed"]]
        if ok.empty:
            raise EstimationError(
                f"all {scenario.replicates} replicates failed for {label} in {scenario.name}"
            )
        pw = ok.drop_duplicates("replicate")["pointwise_mse"].mean()
        for e in scenario.estimands:
            est = ok[ok["estimand"] == e.label]
            rows_e = est[["estimate", "ci_lo", "ci_hi", "p"]].itertuples(index=False)
            m = metrics((_Row(*r) for r in rows_e), scenario.truth(e))
            table[(label, e.label)] = m
            rows.append(dict(scenario=scenario.name, curve=scenario.curve.label, model=label,
                             estimand=e.label, bias=m.bias, bias_mcse=m.bias_mcse,
                             coverage=m.coverage, mse=m.mse, power=m.power,
                             avg_pointwise_mse=float(pw), n_fail=int(failed)))
    return SimResult(scenario, pd.DataFrame(rows, columns=list(RESULT_COLUMNS)), table, frame)


class _Row:
    """Minimal estimate record accepted by :func:`metrics`."""

    __slots__ = ("estimate", "ci", "p")

    def __init__(self, estimate, lo, hi, p):
        self.estimate, self.ci, self.p = estimate, (lo, hi), p


def run_scenario(scenario: SimScenario, parallelism: int = 1, replicates: Optional[int] = None) -> SimResult:
    """Run every replicate of ``scenario`` and summarize per model and estimand."""
    n = scenario.replicates if replicates is None else int(replicates)
    if n < 1:
        raise DomainError("replicates must be >= 1")
    if n != scenario.replicates:
        scenario = replace(scenario, replicates=n)
    jobs = max(1, min(int(parallelism), n))
    if jobs == 1:
        records = _run_chunk((scenario, range(n)))
    else:
        chunks = [(scenario, list(range(k, n, jobs))) for k in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_chunk, chunks))
        records = sorted((rec for part in parts for rec in part), key=lambda r: r["replicate"])
    return _summarize(scenario, records)


BASE_DESIGN = StudyDesign(num_sequences=6, clusters_per_sequence=4, cluster_size=20)
CURVES = ("a", "b", "c", "d")


def scenario_catalog(replicates: int = 500, seed: int = 1) -> dict:
    """The five simulation studies, each a list of scenarios over curves a to d."""
    base_est = (Estimand.tate(0, 6), Estimand.lte())
    # with extra periods the long-term effect is read at s=6, where the curve has flattened
    extra_est = (Estimand.tate(0, 6), Estimand.pte(6))
    cat = {name: [] for name in ("base", "reti", "extra", "rte", "dirichlet")}
    for k in CURVES:
        curve = canonical_curve(k, 6)
        common = dict(curve=curve, replicates=replicates, seed=seed)
        cat["base"].append(SimScenario("base", BASE_DESIGN, models=("it", "eti", "ncs:4", "mec"),
                                       estimands=base_est, **common))
        cat["reti"].append(SimScenario("reti", BASE_DESIGN, models=("eti", "reti:3", "reti:4"),
                                       estimands=base_est, **common))
        for extra in (0, 1, 2):
            design = replace(BASE_DESIGN, extra_periods=extra)
            cat["extra"].append(SimScenario(f"extra{extra}", design, models=("it", "eti", "ncs:4"),
                                            estimands=extra_est, **common))
        for nu, rho, name in ((1.0, -0.2, "rte"), (0.0, 0.0, "rte-null")):
            cat["rte"].append(SimScenario(name, BASE_DESIGN, params=GenParams(nu=nu, rho_re=rho),
                                          models=("eti", "eti+rte"), estimands=base_est, **common))
        cat["dirichlet"].append(SimScenario("dirichlet", BASE_DESIGN,
                                            models=("eti", "mec", "mec:symmetric"),
                                            estimands=base_est, **common))
    return cat


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
