"""``swedge`` command-line interface.

Exit codes: 0 on success, 1 for usage errors, 2 for data or estimation
errors. Numbers are written with at least 12 significant digits.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from .design import StudyDesign
from .datagen import TrialDataset, generate, replicate_seed
from .estimands import Estimand, effect_curve_estimate, estimate
from .exceptions import DomainError, EstimationError
from .mec import McmcConfig, MecPrior, fit_mec, mec_curve, mec_estimands
from .models import ModelSpec, fit
from .simharness import CURVES, parse_model, run_scenario, scenario_catalog
from .weights import THREE_SEQUENCE_DESIGN, CorrelationSpec, numeric_weights, weight_profile

FLOAT_FMT = "%.15g"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _usage(fn, *args, **kw):
    """Call a parser, turning domain errors into usage errors."""
    try:
        return fn(*args, **kw)
    except DomainError as exc:
        raise UsageError(f"swedge: error: {exc}") from exc


def _num(x) -> str:
    return FLOAT_FMT % x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SWEDGE_SEED")
    if env is None:
        raise UsageError("a seed is required: pass --seed or set SWEDGE_SEED")
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"SWEDGE_SEED must be an integer, got {env!r}") from exc


def _write_rows(out, header, rows):
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _parse_corr(text: str):
    kind, _, rest = text.partition(":")
    try:
        values = [float(v) for v in rest.split(",")] if rest else []
    except ValueError as exc:
        raise UsageError(f"bad --corr values in {text!r}") from exc
    if kind == "nested" and len(values) == 2:
        return _usage(CorrelationSpec.nested_exchangeable, *values)
    if kind == "rte" and len(values) == 3:
        return _usage(CorrelationSpec.random_treatment, *values)
    raise UsageError("--corr takes nested:RHO_W,RHO_B or rte:RHO0,RHO1,RHO10")


def cmd_weights(args, out):
    if args.corr is None:
        if args.sequences is None or args.phi is None:
            raise UsageError("weights needs --sequences and --phi (or --corr)")
        profile = weight_profile(args.sequences, args.phi)
    else:
        corr = _parse_corr(args.corr)
        if args.sequences is None:
            design = THREE_SEQUENCE_DESIGN
        else:
            design = StudyDesign(args.sequences, 1, args.cluster_size)
        profile = numeric_weights(design, corr)
    _write_rows(out, ["s", "weight"], [(s, float(w) + 0.0) for s, w in enumerate(profile.as_array(), start=1)])


def _load(args) -> TrialDataset:
    if args.data is None:
        raise UsageError("--data is required")
    return TrialDataset.read_csv(args.data)


def _mec_fit(args, data):
    S = data.design.max_exposure
    if args.prior is None:
        prior = MecPrior.informative(S)
    elif args.prior == "symmetric":
        prior = MecPrior.symmetric(S)
    else:
        try:
            prior = MecPrior(tuple(float(v) for v in args.prior.split(",")))
        except ValueError as exc:
            raise UsageError(f"bad --prior {args.prior!r}") from exc
    cfg = McmcConfig(args.chains, args.warmup if args.warmup is not None else args.samples,
                     args.samples, _seed(args))
    return fit_mec(data, prior, cfg, args.level)


def _spec(args):
    if args.model == "mec":
        return None
    return _usage(ModelSpec.parse, args.model, random_treatment=args.rte, ci_level=args.level)


def cmd_analyze(args, out):
    est = _usage(Estimand.parse, args.estimand)
    spec = _spec(args)
    data = _load(args)
    if spec is None:
        draws = _mec_fit(args, data)
        result = mec_estimands(draws, est, method=args.method).as_dict()
        result.update(rhat=draws.rhat, acceptance={k: float(np.mean(v)) for k, v in draws.acceptance.items()})
        model_label = "MEC"
    else:
        fm = fit(data, spec, method=args.reml_method)
        result = estimate(fm, est, args.method).as_dict()
        model_label = fm.spec.label
    payload = {"model": model_label, "estimand": est.label, "method": args.method, **result}
    out.write(json.dumps(_jsonable(payload), indent=2) + "\n")


def cmd_curve(args, out):
    spec = _spec(args)
    data = _load(args)
    if spec is None:
        rows = mec_curve(_mec_fit(args, data))
    else:
        rows = effect_curve_estimate(fit(data, spec, method=args.reml_method))
    _write_rows(out, ["s", "estimate", "ci_lo", "ci_hi"], rows)


def cmd_simulate(args, out):
    seed = _seed(args)
    catalog = scenario_catalog(replicates=args.replicates, seed=seed)
    curves = args.curves.split(",")
    for k in curves:
        if k not in CURVES:
            raise UsageError(f"unknown curve {k!r}; choose from a,b,c,d")
    models = tuple(m for m in args.models.split(",")) if args.models else None
    if models:
        for m in models:
            _usage(parse_model, m)
    frames = []
    for sc in catalog[args.scenario]:
        if sc.curve.label not in curves:
            continue
        if models:
            sc = replace(sc, models=models)
        if args.emit_data:
            _emit(sc, Path(args.emit_data))
        frames.append(run_scenario(sc, parallelism=args.jobs).summary)
    table = pd.concat(frames, ignore_index=True)
    if args.out:
        table.to_csv(args.out, index=False, float_format="%.15g")
    else:
        table.to_csv(out, index=False, float_format="%.15g")


def _emit(scenario, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    for r in range(scenario.replicates):
        data = generate(scenario.design, scenario.curve, scenario.params,
                        replicate_seed(scenario.seed, r))
        data.to_csv(directory / f"{scenario.name}_{scenario.curve.label}_{r:04d}.csv")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="swedge", description="Exposure-time treatment effects in stepped wedge trials.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    w = sub.add_parser("weights", help="IT estimator weights on exposure times")
    w.add_argument("--sequences", type=int)
    w.add_argument("--phi", type=float)
    w.add_argument("--corr", help="nested:RHO_W,RHO_B or rte:RHO0,RHO1,RHO10")
    w.add_argument("--cluster-size", type=int, default=2)

    for name, helptext in (("analyze", "estimate a TATE, PTE or LTE"),
                           ("curve", "pointwise effect curve estimates")):
        a = sub.add_parser(name, help=helptext)
        a.add_argument("--data")
        a.add_argument("--model", default="eti", help="it, eti, reti:S, ncs:D or mec")
        a.add_argument("--rte", action="store_true", help="add a random treatment effect")
        if name == "analyze":
            a.add_argument("--estimand", default="lte", help="tate:S1:S2, pte:S0 or lte")
            a.add_argument("--method", choices=("right", "trapezoid"), default="right")
        a.add_argument("--level", type=float, default=0.95)
        a.add_argument("--reml-method", choices=("reml", "ml"), default="reml")
        a.add_argument("--prior", help="Dirichlet constants c1,...,cS or 'symmetric'")
        a.add_argument("--chains", type=int, default=4)
        a.add_argument("--samples", type=int, default=2500)
        a.add_argument("--warmup", type=int)
        a.add_argument("--seed", type=int)

    s = sub.add_parser("simulate", help="run a simulation study")
    s.add_argument("--scenario", required=True, choices=("base", "reti", "extra", "rte", "dirichlet"))
    s.add_argument("--curves", default="a,b,c,d")
    s.add_argument("--models")
    s.add_argument("--replicates", type=int, default=500)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.add_argument("--emit-data", metavar="DIR")
    return p


COMMANDS = {"weights": cmd_weights, "analyze": cmd_analyze, "curve": cmd_curve,
            "simulate": cmd_simulate}


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip() + "\nswedge: error: a subcommand is required")
        if args.command in ("analyze", "curve") and args.model == "mec" and args.rte:
            raise UsageError("--rte is not available for the mec model")
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (DomainError, EstimationError, OSError) as exc:
        print(f"swedge: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
