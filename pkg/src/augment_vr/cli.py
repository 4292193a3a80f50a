"""Command-line front end.

Every command writes a JSON document (to ``--out`` or stdout). Exit codes:
0 success, 1 data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import ana, cuped, rng, simulator
from . import metrics as metric_defs
from .data import load_decomposed_json, load_unit_csv, write_decomposed_json, write_unit_csv
from .errors import AugmentVRError

COMMANDS = ("analyze", "cuped", "ancova", "ana_fit", "ana_apply", "simulate", "scorecard")


class UsageError(Exception):
    def __init__(self, flag: str, message: str):
        self.flag = flag
        super().__init__(f"{flag}: {message}")


@dataclass
class RunConfig:
    command: str
    data: Path | None = None
    prior: Path | None = None
    metrics: list[str] = field(default_factory=list)
    covariates: list[str] = field(default_factory=list)
    outcome: str | None = None
    covariate: str | None = None
    variant: str = "2"
    objective: str = "both"
    alpha: float = 0.05
    seed: int | None = None
    resamples: int = metric_defs.DEFAULT_RESAMPLES
    out: Path | None = None
    csv_out: Path | None = None
    truth_out: Path | None = None
    sim_kind: str = "unit"
    sim: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise UsageError("command", f"unknown command {self.command!r}")
        needs_data = self.command != "simulate"
        if needs_data and self.data is None:
            raise UsageError("--data", "required")
        if self.command in ("analyze", "cuped") and not self.metrics:
            raise UsageError("--metric", "required")
        if self.command == "cuped" and not self.covariates:
            raise UsageError("--cov", "required")
        if self.command == "cuped" and len(self.metrics) != 1:
            raise UsageError("--metric", "cuped takes exactly one metric")
        if self.command == "ancova":
            if not self.outcome:
                raise UsageError("--outcome", "required")
            if not self.covariate:
                raise UsageError("--covariate", "required")
            if self.variant not in ("1", "2"):
                raise UsageError("--variant", "must be 1 or 2")
        if self.command == "ana_apply" and self.prior is None:
            raise UsageError("--prior", "required")
        if self.objective not in ("min-error", "max-corr", "both"):
            raise UsageError("--objective", "must be min-error, max-corr or both")
        if not 0 < self.alpha < 1:
            raise UsageError("--alpha", "must lie in (0, 1)")
        if self.resamples < metric_defs.MIN_RESAMPLES:
            raise UsageError("--resamples", f"must be >= {metric_defs.MIN_RESAMPLES}")
        if self.seed is not None:
            try:
                rng.check_seed(self.seed)
            except ValueError as exc:
                raise UsageError("--seed", str(exc)) from None
        if self.command == "simulate":
            if self.seed is None:
                raise UsageError("--seed", "required for simulate")
            if self.out is None:
                raise UsageError("--out", "required for simulate")
        try:
            specs = [metric_defs.parse_metric(m) for m in self.metrics]
        except AugmentVRError as exc:
            raise UsageError("--metric", str(exc)) from None
        try:
            cov_specs = [metric_defs.parse_metric(c) for c in self.covariates]
        except AugmentVRError as exc:
            raise UsageError("--cov", str(exc)) from None
        stochastic = any(s.kind != "mean" for s in specs) or (
            self.command == "cuped" and any(s.kind != "mean" for s in cov_specs)
        )
        if stochastic and self.seed is None:
            raise UsageError("--seed", "required when a metric needs the bootstrap")


def _schema(metric_specs: Sequence[metric_defs.MetricSpec], cov_specs: Sequence[metric_defs.MetricSpec]):
    schema: dict[str, str] = {}

    def put(col: str, kind: str, flag: str) -> None:
        if schema.get(col, kind) != kind:
            raise UsageError(flag, f"column {col!r} used both as {schema[col]} and {kind}")
        schema[col] = kind

    for s in metric_specs:
        if s.kind == "ratio":
            put(s.column, "numerator", "--metric")
            put(s.denominator, "denominator", "--metric")
        else:
            put(s.column, "outcome", "--metric")
    for s in cov_specs:
        for col in s.columns:
            put(col, "pre_period", "--cov")
    return schema


def _dump(payload: Any, out: Path | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _analyze(cfg: RunConfig) -> dict[str, Any]:
    specs = [metric_defs.parse_metric(m) for m in cfg.metrics]
    data = load_unit_csv(cfg.data, _schema(specs, []))
    results = []
    for spec in specs:
        est = metric_defs.naive_delta(data, spec, resamples=cfg.resamples, seed=cfg.seed or 0)
        rec = cuped.result_record(est, cfg.seed if spec.kind == "percentile" else None)
        rec["metric"] = str(spec)
        results.append(rec)
    return {"command": "analyze", "experiment_id": data.experiment_id, "seed": cfg.seed, "results": results}


def _cuped(cfg: RunConfig) -> dict[str, Any]:
    spec = metric_defs.parse_metric(cfg.metrics[0])
    cov_specs = [metric_defs.parse_metric(c) for c in cfg.covariates]
    data = load_unit_csv(cfg.data, _schema([spec], cov_specs))
    res = cuped.cuped_estimate(
        data, spec, cov_specs, resamples=cfg.resamples, seed=cfg.seed or 0
    )
    out = res.to_dict()
    out.update(command="cuped", experiment_id=data.experiment_id)
    return out


def _ancova(cfg: RunConfig) -> dict[str, Any]:
    schema = {cfg.outcome: "outcome", cfg.covariate: "pre_period"}
    if cfg.outcome == cfg.covariate:
        raise UsageError("--covariate", "must differ from --outcome")
    data = load_unit_csv(cfg.data, schema)
    est = cuped.ancova_estimate(data, cfg.outcome, cfg.covariate, cfg.variant)
    rec = cuped.result_record(est)
    rec.update(command="ancova", experiment_id=data.experiment_id)
    return rec


def _ana_fit(cfg: RunConfig) -> dict[str, Any]:
    prior = ana.fit_prior(load_decomposed_json(cfg.data))
    return prior.to_json()


def _load_prior(path: Path) -> ana.AnaPrior:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return ana.AnaPrior.from_json(payload)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, AugmentVRError):
            raise
        raise AugmentVRError(f"malformed prior file {path}: {exc}") from None


_OBJECTIVE_DROP = {
    "min-error": ("ana_corr", "theta_corr"),
    "max-corr": ("ana_err", "theta_err"),
    "both": (),
}


def _ana_rows(cfg: RunConfig) -> tuple[ana.AnaPrior, ana.Scorecard]:
    records = load_decomposed_json(cfg.data)
    prior = _load_prior(cfg.prior) if cfg.prior is not None else ana.fit_prior(records)
    return prior, ana.significance_scorecard(records, prior, cfg.alpha)


def _ana_apply(cfg: RunConfig) -> dict[str, Any]:
    _, card = _ana_rows(cfg)
    drop = _OBJECTIVE_DROP[cfg.objective]
    rows = []
    for row in card.rows:
        out = {}
        for key, value in row.items():
            if any(key == d or key.startswith(d + "_") for d in drop):
                continue
            if key in ("p_values", "significant"):
                value = {k: v for k, v in value.items() if k not in drop}
            out[key] = value
        # Friendlier aliases for the two ANA estimators.
        if "ana_err" in out:
            out["ana_min_err"] = out["ana_err"]
        if "ana_corr" in out:
            out["ana_max_corr"] = out["ana_corr"]
        rows.append(out)
    return {"command": "ana_apply", "alpha": cfg.alpha, "objective": cfg.objective, "experiments": rows}


def _scorecard(cfg: RunConfig) -> dict[str, Any]:
    prior, card = _ana_rows(cfg)
    if cfg.csv_out is not None:
        with Path(cfg.csv_out).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, ["experiment", "method", "estimate", "variance", "z"])
            writer.writeheader()
            for r in card.tidy_rows():
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    payload = card.to_json()
    payload.update(command="scorecard", prior=prior.to_json())
    return payload


def _parse_matrix(text: str, flag: str) -> np.ndarray:
    try:
        a, b, c = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(flag, "expected three comma-separated numbers a,b,c for [[a,b],[b,c]]") from None
    return np.array([[a, b], [b, c]])


def _simulate(cfg: RunConfig) -> dict[str, Any]:
    sim = cfg.sim
    if cfg.sim_kind == "unit":
        try:
            scenario = simulator.SimScenario(seed=cfg.seed, **sim)
        except ValueError as exc:
            raise UsageError("simulate unit", str(exc)) from None
        data = simulator.gen_experiment(scenario)
        write_unit_csv(data, cfg.out)
        return {
            "command": "simulate",
            "kind": "unit",
            "seed": cfg.seed,
            "rng": rng.GENERATOR_NAME,
            "scenario": {k: v for k, v in vars(scenario).items()},
            "n_treatment": data.n_treatment,
            "n_control": data.n_control,
            "output": str(cfg.out),
        }
    try:
        scenario = simulator.AnaScenario(
            sim["n_experiments"],
            _parse_matrix(sim["lam"], "--lambda"),
            _parse_matrix(sim["sigma"], "--sigma"),
            sim["sigma_dispersion"],
            cfg.seed,
        )
    except (ValueError, AugmentVRError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError("simulate ana", str(exc)) from None
    pop = simulator.gen_ana_population(scenario)
    write_decomposed_json(pop.records, cfg.out)
    truth = cfg.truth_out or Path(cfg.out).with_name("truth.json")
    simulator.write_truth_json(pop, truth, cfg.seed)
    return {
        "command": "simulate",
        "kind": "ana",
        "seed": cfg.seed,
        "rng": rng.GENERATOR_NAME,
        "n_experiments": scenario.n_experiments,
        "lambda": scenario.lam.tolist(),
        "sigma": scenario.sigma.tolist(),
        "sigma_dispersion": scenario.sigma_dispersion,
        "output": str(cfg.out),
        "truth": str(truth),
    }


_HANDLERS = {
    "analyze": _analyze,
    "cuped": _cuped,
    "ancova": _ancova,
    "ana_fit": _ana_fit,
    "ana_apply": _ana_apply,
    "simulate": _simulate,
    "scorecard": _scorecard,
}


def run(cfg: RunConfig) -> int:
    try:
        cfg.validate()
        payload = _HANDLERS[cfg.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (AugmentVRError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    # simulate writes its data to --out; the run summary goes to stdout.
    _dump(payload, None if cfg.command == "simulate" else cfg.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="augment-vr", description="Variance reduction for randomized experiments."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, data: bool = True) -> None:
        if data:
            p.add_argument("--data", type=Path, required=True)
        p.add_argument("--out", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--resamples", type=int, default=metric_defs.DEFAULT_RESAMPLES)
        p.add_argument("--alpha", type=float, default=0.05)

    p = sub.add_parser("analyze", help="naive deltas for one or more metrics")
    common(p)
    p.add_argument("--metric", action="append", required=True, help="mean:y, ratio:a/b, p50:y")

    p = sub.add_parser("cuped", help="augmented delta with pre-period covariates")
    common(p)
    p.add_argument("--metric", action="append", required=True)
    p.add_argument("--cov", action="append", required=True, help="pre-period covariate metric")

    p = sub.add_parser("ancova", help="regression-adjusted delta")
    common(p)
    p.add_argument("--outcome", required=True)
    p.add_argument("--covariate", required=True)
    p.add_argument("--variant", choices=["1", "2"], default="2")

    p_ana = sub.add_parser("ana", help="decomposed-metric prior fitting and application")
    ana_sub = p_ana.add_subparsers(dest="ana_command", required=True)
    p = ana_sub.add_parser("fit", help="fit the effect prior from decomposed deltas")
    common(p)
    p = ana_sub.add_parser("apply", help="per-experiment ANA and Bayesian estimates")
    common(p)
    p.add_argument("--prior", type=Path, required=True)
    p.add_argument("--objective", choices=["min-error", "max-corr", "both"], default="both")

    p = sub.add_parser("scorecard", help="significance counts per estimator")
    common(p)
    p.add_argument("--prior", type=Path, help="prior.json; fitted from --data when omitted")
    p.add_argument("--csv", type=Path, dest="csv_out", help="tidy per-method CSV for plotting")

    p_sim = sub.add_parser("simulate", help="generate synthetic data")
    sim_sub = p_sim.add_subparsers(dest="sim_kind", required=True)
    p = sim_sub.add_parser("unit", help="unit-level CSV")
    common(p, data=False)
    p.add_argument("--n-units", type=int, required=True)
    p.add_argument("--p", type=float, default=0.5, dest="p_treatment")
    p.add_argument("--rho", type=float, default=0.0, dest="rho_pre")
    p.add_argument("--delta", type=float, default=0.0, dest="true_delta")
    p.add_argument("--dist", choices=["normal", "lognormal"], default="normal", dest="outcome_dist")
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--sd", type=float, default=1.0)
    p.add_argument("--treatment-slope", type=float, default=0.0)
    p.add_argument("--balanced", action="store_true")
    p = sim_sub.add_parser("ana", help="decomposed-delta JSON plus truth.json")
    common(p, data=False)
    p.add_argument("--n-experiments", type=int, required=True)
    p.add_argument("--lambda", dest="lam", default="0.576,-0.896,4.329")
    p.add_argument("--sigma", default="4.020,0.169,0.811")
    p.add_argument("--dispersion", type=float, default=0.0, dest="sigma_dispersion")
    p.add_argument("--truth", type=Path, dest="truth_out")
    return parser


_SIM_UNIT_KEYS = (
    "n_units", "p_treatment", "rho_pre", "true_delta", "outcome_dist", "mu", "sd",
    "treatment_slope", "balanced",
)
_SIM_ANA_KEYS = ("n_experiments", "lam", "sigma", "sigma_dispersion")


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    command = ns.command
    if command == "ana":
        command = f"ana_{ns.ana_command}"
    cfg = RunConfig(
        command=command,
        data=getattr(ns, "data", None),
        prior=getattr(ns, "prior", None),
        metrics=getattr(ns, "metric", None) or [],
        covariates=getattr(ns, "cov", None) or [],
        outcome=getattr(ns, "outcome", None),
        covariate=getattr(ns, "covariate", None),
        variant=getattr(ns, "variant", "2"),
        objective=getattr(ns, "objective", "both"),
        alpha=ns.alpha,
        seed=ns.seed,
        resamples=ns.resamples,
        out=ns.out,
        csv_out=getattr(ns, "csv_out", None),
        truth_out=getattr(ns, "truth_out", None),
    )
    if command == "simulate":
        cfg.sim_kind = ns.sim_kind
        keys = _SIM_UNIT_KEYS if ns.sim_kind == "unit" else _SIM_ANA_KEYS
        cfg.sim = {k: getattr(ns, k) for k in keys}
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return run(config_from_args(ns))
    except BrokenPipeError:
        # Downstream reader closed early (e.g. `| head`); silence the flush at exit.
        sys.stdout = open(os.devnull, "w")
        return 0


if __name__ == "__main__":
    raise SystemExit(main())
