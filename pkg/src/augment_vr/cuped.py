"""Variance reduction by mean-zero augmentation, plus regression comparators.

Sign convention: coefficients returned by :func:`optimal_theta`,
:func:`optimal_theta_multi` and stored in :class:`CupedResult` are *subtracted*,
i.e. the adjusted estimate is ``delta(Y) - theta . delta(X)``.
:func:`augmented_delta` takes the additive form ``delta + theta * delta0``
so callers pass ``-theta`` there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .data import CONTROL, GROUPS, TREATMENT, ExperimentData
from .errors import (
    DataError,
    DegenerateCovariate,
    MismatchedExperiment,
    NotPrePeriod,
    SingularDesign,
    SingularSystem,
)
from .metrics import (
    DEFAULT_RESAMPLES,
    DeltaEstimate,
    MetricSpec,
    bootstrap_deltas,
    check_spec,
    metric_value,
    two_sided_p,
    z_score,
)
from . import rng

DEGENERATE_RTOL = 1e-12
RIDGE_RTOL = 1e-10


def augmented_delta(
    delta_hat: DeltaEstimate, aug: DeltaEstimate, theta: float, covariance: float = 0.0
) -> DeltaEstimate:
    """``delta_hat + theta * aug`` with plug-in variance.

    ``covariance`` is Cov[delta_hat, aug]; see :func:`delta_covariance` for the
    mean-metric case.
    """
    eid_a = delta_hat.aux.get("experiment_id")
    eid_b = aug.aux.get("experiment_id")
    if (eid_a is not None and eid_b is not None and eid_a != eid_b) or (
        delta_hat.n_treatment,
        delta_hat.n_control,
    ) != (aug.n_treatment, aug.n_control):
        raise MismatchedExperiment("estimates come from different experiments")
    if covariance**2 > delta_hat.variance * aug.variance * (1 + 1e-9) + 1e-300:
        raise ValueError("covariance violates Cauchy-Schwarz for the given variances")
    if theta == 0:
        return delta_hat
    var = delta_hat.variance + theta**2 * aug.variance + 2 * theta * covariance
    aux = dict(delta_hat.aux, theta=theta, augmentation=aug.aux.get("metric"))
    return DeltaEstimate(
        delta_hat.estimate + theta * aug.estimate,
        max(var, 0.0),
        "cuped",
        delta_hat.n_treatment,
        delta_hat.n_control,
        aux,
    )


def delta_moments(data: ExperimentData, columns: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Difference-in-means for each column and their joint covariance.

    Cov[mean_g(a), mean_g(b)] = Cov_g(a, b) / n_g, summed over both groups.
    """
    deltas = np.zeros(len(columns))
    cov = np.zeros((len(columns), len(columns)))
    for sign, g in ((1.0, TREATMENT), (-1.0, CONTROL)):
        block = np.column_stack([data.column(c, g) for c in columns])
        n = block.shape[0]
        deltas += sign * block.mean(axis=0)
        if n >= 2:
            cov += np.atleast_2d(np.cov(block, rowvar=False, ddof=1)) / n
    return deltas, cov


def delta_covariance(data: ExperimentData, col_a: str, col_b: str) -> float:
    return float(delta_moments(data, [col_a, col_b])[1][0, 1])


def _check_covariate(data: ExperimentData, outcome: str, covariate: str) -> bool:
    """True if the covariate is usable, False if degenerate in both groups."""
    y = data.column(outcome)
    scale = max(float(np.var(y)), np.finfo(float).tiny)
    for g in GROUPS:
        x = data.column(covariate, g)
        if x.shape[0] >= 2 and np.var(x, ddof=1) > DEGENERATE_RTOL * scale:
            return True
    return False


def optimal_theta(data: ExperimentData, outcome: str, covariate: str) -> float:
    """Variance-minimizing coefficient for ``delta(Y) - theta * delta(X)``.

    Per-group covariances are divided by group size, so the treatment slope
    gets weight proportional to the control share and vice versa.
    """
    if not _check_covariate(data, outcome, covariate):
        raise DegenerateCovariate(covariate)
    _, cov = delta_moments(data, [outcome, covariate])
    return float(cov[0, 1] / cov[1, 1])


def _solve_theta(v: np.ndarray, c: np.ndarray) -> np.ndarray:
    dim = v.shape[0]
    trace = float(np.trace(v))
    if not trace > 0:
        raise SingularSystem("augmentation covariance is zero")
    ridged = v + (RIDGE_RTOL * trace / dim) * np.eye(dim)
    try:
        theta = np.linalg.solve(ridged, c)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    if not np.isfinite(theta).all():
        raise SingularSystem("non-finite coefficients")
    return theta


def optimal_theta_multi(
    data: ExperimentData, outcome: str, covariates: Sequence[str]
) -> np.ndarray:
    if not covariates:
        raise ValueError("need at least one covariate")
    if data.n <= len(covariates) + 2:
        raise DataError("too few units for the number of covariates")
    _, cov = delta_moments(data, [outcome, *covariates])
    return _solve_theta(cov[1:, 1:], cov[1:, 0])


@dataclass(frozen=True, eq=False)
class Augmentation:
    """Per-unit augmentation statistics, one column per augmentation.

    ``pre_period_delta`` augmentations come from pre-period columns of the data;
    ``external`` ones are supplied by the caller, who is responsible for their
    difference in means having zero expectation under randomization.
    """

    values_treatment: np.ndarray
    values_control: np.ndarray
    kind: str = "external"
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        vt = np.atleast_2d(np.asarray(self.values_treatment, dtype=float).T).T
        vc = np.atleast_2d(np.asarray(self.values_control, dtype=float).T).T
        if vt.ndim != 2 or vc.ndim != 2 or vt.shape[1] != vc.shape[1]:
            raise DataError("augmentation arrays must be (n_group, k) with matching k")
        if not (np.isfinite(vt).all() and np.isfinite(vc).all()):
            raise DataError("augmentation values must be finite")
        if self.kind not in ("pre_period_delta", "external"):
            raise DataError(f"unknown augmentation kind {self.kind!r}")
        object.__setattr__(self, "values_treatment", vt)
        object.__setattr__(self, "values_control", vc)
        labels = self.labels or tuple(f"aug{j}" for j in range(vt.shape[1]))
        object.__setattr__(self, "labels", tuple(labels))

    @property
    def dim(self) -> int:
        return self.values_treatment.shape[1]

    @classmethod
    def from_pre_period(cls, data: ExperimentData, columns: Sequence[str]) -> "Augmentation":
        for col in columns:
            if data.kind_of(col) != "pre_period":
                raise NotPrePeriod(col)
        vt = np.column_stack([data.column(c, TREATMENT) for c in columns])
        vc = np.column_stack([data.column(c, CONTROL) for c in columns])
        return cls(vt, vc, "pre_period_delta", tuple(columns))

    def attach(self, data: ExperimentData) -> tuple[ExperimentData, list[MetricSpec]]:
        """Data with the augmentation as extra pre-period columns, plus mean specs."""
        if self.values_treatment.shape[0] != data.n_treatment or (
            self.values_control.shape[0] != data.n_control
        ):
            raise MismatchedExperiment("augmentation group sizes do not match the data")
        extra = {}
        specs = []
        for j, label in enumerate(self.labels):
            name = f"__aug__{label}"
            col = np.empty(data.n)
            col[data.treatment] = self.values_treatment[:, j]
            col[~data.treatment] = self.values_control[:, j]
            extra[name] = col
            specs.append(MetricSpec.mean(name))
        return data.with_columns(extra, "pre_period"), specs


@dataclass(frozen=True)
class CupedResult:
    delta: DeltaEstimate
    theta: tuple[float, ...]
    corr_squared: float
    variance_reduction_factor: float
    naive: DeltaEstimate
    seed: int | None = None
    aux: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.delta.method,
            "estimate": self.delta.estimate,
            "variance": self.delta.variance,
            "se": self.delta.se,
            "z": self.delta.z,
            "p_value": self.delta.p_value,
            "theta": list(self.theta),
            "corr_squared": self.corr_squared,
            "variance_reduction_factor": self.variance_reduction_factor,
            "naive_estimate": self.naive.estimate,
            "naive_variance": self.naive.variance,
            "n_treatment": self.delta.n_treatment,
            "n_control": self.delta.n_control,
            "seed": self.seed,
            **self.aux,
        }


def cuped_estimate(
    data: ExperimentData,
    spec: MetricSpec,
    covariates: Sequence[MetricSpec] | Augmentation,
    *,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
) -> CupedResult:
    """Augment the naive delta of ``spec`` with the deltas of ``covariates``.

    All-mean problems use closed-form moments. If the target or any covariate
    is a ratio or percentile, the joint covariance of all deltas is taken from
    a bootstrap that shares resample indices across metrics.
    """
    check_spec(data, spec)
    if isinstance(covariates, Augmentation):
        data, cov_specs = covariates.attach(data)
    else:
        cov_specs = list(covariates)
        if not cov_specs:
            raise ValueError("need at least one covariate")
        for cs in cov_specs:
            check_spec(data, cs)
            for col in cs.columns:
                if data.kind_of(col) != "pre_period":
                    raise NotPrePeriod(col)

    specs = [spec, *cov_specs]
    all_mean = all(s.kind == "mean" for s in specs)
    if all_mean:
        deltas, cov = delta_moments(data, [s.column for s in specs])
        used_seed = None
        variance_method = "closed_form"
    else:
        deltas = np.array(
            [metric_value(data, s, TREATMENT) - metric_value(data, s, CONTROL) for s in specs]
        )
        reps = bootstrap_deltas(data, specs, resamples=resamples, seed=seed)
        cov = np.atleast_2d(np.cov(reps, rowvar=False, ddof=1))
        used_seed = rng.check_seed(seed)
        variance_method = "joint_bootstrap"

    naive_var = float(cov[0, 0])
    v, c = cov[1:, 1:], cov[1:, 0]
    if np.all(np.diag(v) <= DEGENERATE_RTOL * max(naive_var, np.finfo(float).tiny)):
        raise DegenerateCovariate(str(cov_specs[0]))
    theta = _solve_theta(v, c)
    achieved = naive_var - 2 * float(theta @ c) + float(theta @ v @ theta)
    achieved = max(achieved, 0.0)
    if naive_var > 0:
        factor = achieved / naive_var
    else:
        factor = 1.0
    estimate = float(deltas[0] - theta @ deltas[1:])

    aux = {
        "metric": str(spec),
        "covariates": [str(s) for s in cov_specs],
        "experiment_id": data.experiment_id,
        "variance_method": variance_method,
        "theta_sampling_error": "ignored (plug-in)",
    }
    if not all_mean:
        aux["resamples"] = resamples
        aux["rng"] = rng.GENERATOR_NAME
    naive = DeltaEstimate(
        float(deltas[0]), naive_var, "naive", data.n_treatment, data.n_control, dict(aux)
    )
    adjusted = DeltaEstimate(
        estimate,
        achieved,
        "cuped",
        data.n_treatment,
        data.n_control,
        dict(aux, theta=[float(t) for t in theta]),
    )
    return CupedResult(
        adjusted,
        tuple(float(t) for t in theta),
        1.0 - factor,
        factor,
        naive,
        used_seed,
        {"variance_method": variance_method, "covariates": aux["covariates"], "metric": str(spec)},
    )


def ancova_estimate(
    data: ExperimentData, outcome: str, covariate: str, variant: str | int = "ancova2"
) -> DeltaEstimate:
    """Treatment coefficient from OLS with HC0 robust variance.

    ``ancova1`` regresses Y on (1, A, X). ``ancova2`` regresses Y on
    (1, A, Xc, A*Xc) with Xc = X minus its pooled mean. A covariate that is
    constant in both groups is dropped, leaving the difference in means.
    """
    variant = {1: "ancova1", 2: "ancova2", "1": "ancova1", "2": "ancova2"}.get(variant, variant)
    if variant not in ("ancova1", "ancova2"):
        raise ValueError(f"variant must be ancova1 or ancova2, got {variant!r}")
    y = data.column(outcome)
    x = data.column(covariate)
    a = data.treatment.astype(float)
    cols = [np.ones_like(y), a]
    use_x = _check_covariate(data, outcome, covariate)
    if use_x:
        if variant == "ancova1":
            cols.append(x)
        else:
            xc = x - x.mean()
            cols += [xc, a * xc]
    design = np.column_stack(cols)
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise SingularDesign(f"design matrix has rank {rank} < {design.shape[1]}")
    resid = y - design @ coef
    bread = np.linalg.inv(design.T @ design)
    scores = design * resid[:, None]
    vcov = bread @ (scores.T @ scores) @ bread
    return DeltaEstimate(
        float(coef[1]),
        max(float(vcov[1, 1]), 0.0),
        variant,
        data.n_treatment,
        data.n_control,
        {
            "experiment_id": data.experiment_id,
            "outcome": outcome,
            "covariate": covariate,
            "covariate_used": use_x,
            "variance_method": "HC0",
        },
    )


def result_record(est: DeltaEstimate, seed: int | None = None) -> dict[str, Any]:
    """Flat JSON-ready record for a single estimate."""
    return {
        "method": est.method,
        "estimate": est.estimate,
        "variance": est.variance,
        "se": est.se,
        "z": z_score(est.estimate, est.variance),
        "p_value": two_sided_p(z_score(est.estimate, est.variance)),
        "n_treatment": est.n_treatment,
        "n_control": est.n_control,
        "seed": seed,
        "aux": est.aux,
    }
