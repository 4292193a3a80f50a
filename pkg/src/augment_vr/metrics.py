"""Metric definitions, per-group metric values and naive deltas.

Three metric kinds are supported: ``mean`` of a column, ``ratio`` of two column
sums, and ``percentile`` of a column. Variances of the naive delta are
closed-form for means, delta-method for ratios and bootstrapped for
percentiles.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Sequence

import numpy as np

from . import rng
from .data import CONTROL, GROUPS, TREATMENT, ExperimentData
from .errors import EmptyGroup, InvalidMetricSpec, MissingColumn, ZeroDenominator

DEFAULT_RESAMPLES = 2000
MIN_RESAMPLES = 100

METHODS = frozenset(
    {"naive", "cuped", "ancova1", "ancova2", "ana_min_err", "ana_max_corr", "ana_component"}
)


@dataclass(frozen=True)
class MetricSpec:
    kind: str
    column: str
    denominator: str | None = None
    q: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("mean", "ratio", "percentile"):
            raise InvalidMetricSpec(f"unknown metric kind {self.kind!r}")
        if self.kind == "ratio" and not self.denominator:
            raise InvalidMetricSpec("ratio metric needs a denominator column")
        if self.kind == "percentile":
            if self.q is None or not 0.0 < self.q < 1.0:
                raise InvalidMetricSpec(f"percentile q must lie in (0, 1), got {self.q}")

    @classmethod
    def mean(cls, column: str) -> "MetricSpec":
        return cls("mean", column)

    @classmethod
    def ratio(cls, numerator: str, denominator: str) -> "MetricSpec":
        return cls("ratio", numerator, denominator)

    @classmethod
    def percentile(cls, column: str, q: float) -> "MetricSpec":
        return cls("percentile", column, q=q)

    @property
    def columns(self) -> tuple[str, ...]:
        if self.kind == "ratio":
            return (self.column, self.denominator)
        return (self.column,)

    def __str__(self) -> str:
        if self.kind == "mean":
            return f"mean:{self.column}"
        if self.kind == "ratio":
            return f"ratio:{self.column}/{self.denominator}"
        return f"p{self.q * 100:g}:{self.column}"


_PCT = re.compile(r"^p(\d+(?:\.\d+)?)$")


def parse_metric(text: str) -> MetricSpec:
    """Parse ``mean:y``, ``ratio:num/den`` or ``pNN:col``."""
    head, sep, tail = text.partition(":")
    if not sep or not tail:
        raise InvalidMetricSpec(f"cannot parse metric {text!r}")
    head = head.strip().lower()
    tail = tail.strip()
    if head == "mean":
        return MetricSpec.mean(tail)
    if head == "ratio":
        num, slash, den = tail.partition("/")
        if not slash or not num or not den:
            raise InvalidMetricSpec(f"ratio metric must look like ratio:num/den, got {text!r}")
        return MetricSpec.ratio(num.strip(), den.strip())
    m = _PCT.match(head)
    if m:
        return MetricSpec.percentile(tail, float(Decimal(m.group(1)) / 100))
    raise InvalidMetricSpec(f"cannot parse metric {text!r}")


@dataclass(frozen=True)
class DeltaEstimate:
    """A treatment-effect estimate in metric units with its variance."""

    estimate: float
    variance: float
    method: str
    n_treatment: int
    n_control: int
    aux: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.variance >= 0:
            raise ValueError(f"variance must be >= 0, got {self.variance}")
        if self.n_treatment < 1 or self.n_control < 1:
            raise ValueError("group counts must be >= 1")

    @property
    def se(self) -> float:
        return math.sqrt(self.variance)

    @property
    def z(self) -> float:
        return z_score(self.estimate, self.variance)

    @property
    def p_value(self) -> float:
        return two_sided_p(self.z)

    def to_dict(self) -> dict[str, Any]:
        return {
            "estimate": self.estimate,
            "variance": self.variance,
            "se": self.se,
            "z": self.z,
            "p_value": self.p_value,
            "method": self.method,
            "n_treatment": self.n_treatment,
            "n_control": self.n_control,
            "aux": self.aux,
        }


def z_score(estimate: float, variance: float) -> float:
    # Zero variance has no meaningful z; report 0 so outputs stay finite.
    if variance <= 0:
        return 0.0
    return estimate / math.sqrt(variance)


def two_sided_p(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2))


def check_spec(data: ExperimentData, spec: MetricSpec) -> None:
    for col in spec.columns:
        if col not in data.columns:
            raise MissingColumn(col)


def _value(spec: MetricSpec, num: np.ndarray, den: np.ndarray | None, group: str) -> float:
    if num.shape[0] == 0:
        raise EmptyGroup(group)
    if spec.kind == "mean":
        return float(np.mean(num))
    if spec.kind == "ratio":
        d = float(np.sum(den))
        if d == 0:
            raise ZeroDenominator(group)
        return float(np.sum(num)) / d
    # numpy's default "linear" method interpolates at 0-based rank q*(n-1).
    return float(np.quantile(num, spec.q))


def metric_value(data: ExperimentData, spec: MetricSpec, group: str) -> float:
    check_spec(data, spec)
    if group not in GROUPS:
        raise ValueError(f"group must be one of {GROUPS}, got {group!r}")
    num = data.column(spec.column, group)
    den = data.column(spec.denominator, group) if spec.kind == "ratio" else None
    return _value(spec, num, den, group)


def _mean_variance(x: np.ndarray) -> float:
    if x.shape[0] < 2:
        return 0.0
    return float(np.var(x, ddof=1)) / x.shape[0]


def _ratio_variance(num: np.ndarray, den: np.ndarray) -> float:
    n = num.shape[0]
    if n < 2:
        return 0.0
    ratio = num.sum() / den.sum()
    cov = np.cov(num, den, ddof=1)
    var = (cov[0, 0] - 2 * ratio * cov[0, 1] + ratio**2 * cov[1, 1]) / (n * den.mean() ** 2)
    return max(float(var), 0.0)


def naive_delta(
    data: ExperimentData,
    spec: MetricSpec,
    *,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
) -> DeltaEstimate:
    """Difference of group metric values, treatment minus control."""
    m_t = metric_value(data, spec, TREATMENT)
    m_c = metric_value(data, spec, CONTROL)
    aux: dict[str, Any] = {"metric": str(spec), "experiment_id": data.experiment_id}
    if spec.kind == "mean":
        var = _mean_variance(data.column(spec.column, TREATMENT)) + _mean_variance(
            data.column(spec.column, CONTROL)
        )
        aux["variance_method"] = "closed_form"
    elif spec.kind == "ratio":
        var = sum(
            _ratio_variance(data.column(spec.column, g), data.column(spec.denominator, g))
            for g in GROUPS
        )
        aux["variance_method"] = "delta_method"
    else:
        var = bootstrap_variance(data, spec, resamples=resamples, seed=seed)
        aux.update(variance_method="bootstrap", resamples=resamples, seed=seed, rng=rng.GENERATOR_NAME)
    aux.update(treatment_value=m_t, control_value=m_c)
    return DeltaEstimate(m_t - m_c, var, "naive", data.n_treatment, data.n_control, aux)


def bootstrap_deltas(
    data: ExperimentData,
    specs: Sequence[MetricSpec],
    *,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
) -> np.ndarray:
    """Bootstrap replicates of the naive delta for several metrics at once.

    Units are resampled with replacement within each group, and every metric
    in ``specs`` is evaluated on the same resample, so the columns of the
    returned ``(resamples, len(specs))`` array can be used for joint
    covariances. Resample ``b`` draws from its own Philox stream, which keeps
    the result independent of thread scheduling.
    """
    if resamples < MIN_RESAMPLES:
        raise ValueError(f"resamples must be >= {MIN_RESAMPLES}, got {resamples}")
    for spec in specs:
        check_spec(data, spec)
    groups = {}
    for g in GROUPS:
        if (data.n_treatment if g == TREATMENT else data.n_control) == 0:
            raise EmptyGroup(g)
        groups[g] = [
            (data.column(s.column, g), data.column(s.denominator, g) if s.kind == "ratio" else None)
            for s in specs
        ]
    n_t, n_c = data.n_treatment, data.n_control
    out = np.empty((resamples, len(specs)))

    def work(lo: int, hi: int) -> None:
        for b in range(lo, hi):
            gen = rng.stream(seed, b)
            idx = {TREATMENT: gen.integers(0, n_t, n_t), CONTROL: gen.integers(0, n_c, n_c)}
            for j, spec in enumerate(specs):
                vals = []
                for g in GROUPS:
                    num, den = groups[g][j]
                    i = idx[g]
                    vals.append(_value(spec, num[i], None if den is None else den[i], g))
                out[b, j] = vals[0] - vals[1]

    threads = min(rng.resolve_threads(), resamples)
    if threads <= 1:
        work(0, resamples)
    else:
        bounds = np.linspace(0, resamples, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, bounds[:-1], bounds[1:]))
    return out


def bootstrap_variance(
    data: ExperimentData,
    spec: MetricSpec,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
) -> float:
    reps = bootstrap_deltas(data, [spec], resamples=resamples, seed=seed)[:, 0]
    return float(np.var(reps, ddof=1))
