"""Metric decomposition with approximately-null augmentation.

A metric is split as M = M1 + M2 so that its observed delta is a 2-vector
(delta1, delta2) = (true effect) + (noise). The true effect vector has a
zero-mean normal prior with covariance ``lam`` fitted across historical
experiments; the noise covariance ``sigma`` is known per experiment.
Component 1 is the one whose effect is believed to be near zero.

Two families of estimators for the total effect are provided:

* Bayesian: posterior mean and variance of delta1 + delta2, with and without
  the decomposition.
* Frequentist proxies ``delta2 + theta * delta1`` with theta chosen to
  minimize MSE against the true effect or to maximize correlation with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .data import DecomposedDeltaRecord, clean_covariance
from .errors import (
    DegenerateDenominator,
    DegeneratePrior,
    InsufficientExperiments,
    SingularPosterior,
)
from .metrics import DeltaEstimate, two_sided_p, z_score

DEGENERATE_RTOL = 1e-12
CROSS_CHECK_TOL = 1e-10

SCORECARD_METHODS = ("naive", "delta1", "delta2", "ana_corr", "ana_err")


def project_psd(m: np.ndarray) -> np.ndarray:
    """Nearest symmetric PSD matrix in Frobenius norm (eigenvalues clipped at 0)."""
    sym = (np.asarray(m, dtype=float) + np.asarray(m, dtype=float).T) / 2
    vals, vecs = np.linalg.eigh(sym)
    out = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return (out + out.T) / 2


@dataclass(frozen=True, eq=False)
class AnaPrior:
    lam: np.ndarray
    mean_sigma: np.ndarray
    n_experiments: int

    def __post_init__(self) -> None:
        if self.n_experiments < 2:
            raise InsufficientExperiments(self.n_experiments)
        for name in ("lam", "mean_sigma"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (2, 2):
                raise ValueError(f"{name} must be 2x2")
            m = clean_covariance(m, name)
            m.flags.writeable = False
            object.__setattr__(self, name, m)

    def to_json(self) -> dict[str, Any]:
        return {
            "lambda": self.lam.tolist(),
            "mean_sigma": self.mean_sigma.tolist(),
            "n_experiments": self.n_experiments,
        }

    @classmethod
    def from_json(cls, payload: dict[str, Any]) -> "AnaPrior":
        return cls(
            np.array(payload["lambda"], dtype=float),
            np.array(payload["mean_sigma"], dtype=float),
            int(payload["n_experiments"]),
        )


@dataclass(frozen=True)
class AnaPosterior:
    mean: float
    variance: float
    z_score: float
    weights: tuple[float, float]


@dataclass(frozen=True)
class AnaTheta:
    objective: str
    theta: float

    def __post_init__(self) -> None:
        if self.objective not in ("min_error", "max_corr", "fixed"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if not math.isfinite(self.theta):
            raise ValueError("theta must be finite")


def fit_prior(records: Sequence[DecomposedDeltaRecord]) -> AnaPrior:
    """Method-of-moments prior: sample covariance of deltas minus mean noise.

    The prior mean is fixed at zero. The difference is projected onto the PSD
    cone by clipping eigenvalues at exactly 0, so a truly null component stays
    null.
    """
    if len(records) < 2:
        raise InsufficientExperiments(len(records))
    deltas = np.array([r.delta for r in records])
    mean_sigma = np.mean([r.sigma for r in records], axis=0)
    lam = project_psd(np.cov(deltas, rowvar=False, ddof=1) - mean_sigma)
    return AnaPrior(lam, mean_sigma, len(records))


def _scale(*mats: np.ndarray) -> float:
    return max(float(np.abs(m).max()) for m in mats)


def posterior_weights(lam: np.ndarray, sigma: np.ndarray) -> tuple[float, float]:
    """Closed-form weights (w1, w2) so that E[delta | obs] = w1*d1 + w2*d2."""
    l11, l12, l22 = lam[0, 0], lam[0, 1], lam[1, 1]
    s11, s12, s22 = sigma[0, 0], sigma[0, 1], sigma[1, 1]
    c = (
        l11 * l22 + l11 * s22 + l22 * s11 + s11 * s22
        - l12**2 - 2 * l12 * s12 - s12**2
    )
    if abs(c) <= DEGENERATE_RTOL * max(_scale(lam, sigma) ** 2, np.finfo(float).tiny):
        raise SingularPosterior("lambda + sigma is singular")
    w1 = ((l11 + l12) * (l22 + s22) - (l12 + s12) * (l12 + l22)) / c
    w2 = ((l12 + l22) * (l11 + s11) - (l12 + s12) * (l11 + l12)) / c
    return float(w1), float(w2)


def _det(m: np.ndarray) -> float:
    return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])


def _regularized(lam: np.ndarray, sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    total = lam + sigma
    scale = _scale(lam, sigma)
    if scale == 0:
        raise SingularPosterior("lambda and sigma are both zero")
    if abs(_det(total)) <= DEGENERATE_RTOL * scale**2:
        sigma = sigma + DEGENERATE_RTOL * float(np.trace(total)) * np.eye(2)
    return lam, sigma


def posterior(prior: AnaPrior, record: DecomposedDeltaRecord) -> AnaPosterior:
    """Posterior of the total effect under the bivariate model.

    Computed twice, via the shrinkage matrix lam (lam + sigma)^-1 and via the
    closed-form weights; the two must agree or :class:`SingularPosterior` is
    raised.
    """
    lam, sigma = _regularized(prior.lam, record.sigma)
    ones = np.ones(2)
    shrink = np.linalg.solve((lam + sigma).T, lam.T).T
    w_matrix = ones @ shrink
    w1, w2 = posterior_weights(lam, sigma)
    if not np.allclose(w_matrix, [w1, w2], rtol=CROSS_CHECK_TOL, atol=CROSS_CHECK_TOL):
        raise SingularPosterior(
            f"closed-form weights {w1, w2} disagree with matrix weights {tuple(w_matrix)}"
        )
    mean = w1 * record.delta[0] + w2 * record.delta[1]
    var = float(ones @ (np.eye(2) - shrink) @ lam @ ones)
    var = max(var, 0.0)
    return AnaPosterior(float(mean), var, z_score(mean, var), (w1, w2))


def posterior_undecomposed(prior: AnaPrior, record: DecomposedDeltaRecord) -> AnaPosterior:
    """Normal-normal posterior using only the total delta1 + delta2."""
    lam2 = float(prior.lam.sum())
    sig2 = float(record.sigma.sum())
    if not lam2 + sig2 > 0:
        raise DegeneratePrior("prior and noise variance of the total are both zero")
    a = lam2 / (lam2 + sig2)
    mean = a * float(record.delta.sum())
    var = a * sig2
    return AnaPosterior(mean, var, z_score(mean, var), (a, a))


def contraction_gap(prior: AnaPrior, sigma: np.ndarray) -> float:
    """Undecomposed posterior variance minus bivariate posterior variance."""
    sigma = np.asarray(sigma, dtype=float)
    lam = prior.lam
    lam2 = float(lam.sum())
    sig2 = float(sigma.sum())
    if lam2 + sig2 <= 0:
        return 0.0
    undecomposed = lam2 * sig2 / (lam2 + sig2)
    if _scale(lam) == 0:
        return undecomposed
    total = lam + sigma
    if abs(_det(total)) <= DEGENERATE_RTOL * _scale(lam, sigma) ** 2:
        # Singular joint covariance: (d1, d2) carries no more than its sum.
        return 0.0
    shrink = np.linalg.solve(total.T, lam.T).T
    ones = np.ones(2)
    bivariate = float(ones @ (np.eye(2) - shrink) @ lam @ ones)
    return undecomposed - bivariate


def _denominator_ok(den: float, lam: np.ndarray, sigma: np.ndarray, power: int) -> None:
    if abs(den) <= DEGENERATE_RTOL * max(_scale(lam, sigma) ** power, np.finfo(float).tiny):
        raise DegenerateDenominator("denominator is (near) zero")


def theta_min_error(prior: AnaPrior, sigma: np.ndarray) -> AnaTheta:
    """Coefficient on delta1 minimizing E[(delta - (delta2 + theta*delta1))^2]."""
    lam = prior.lam
    sigma = np.asarray(sigma, dtype=float)
    den = lam[0, 0] + sigma[0, 0]
    _denominator_ok(den, lam, sigma, 1)
    return AnaTheta("min_error", float((lam[0, 0] - sigma[0, 1]) / den))


def theta_max_corr(prior: AnaPrior, sigma: np.ndarray) -> AnaTheta:
    """Coefficient on delta1 maximizing Corr(delta, delta2 + theta*delta1)."""
    lam = prior.lam
    sigma = np.asarray(sigma, dtype=float)
    l11, l12, l22 = lam[0, 0], lam[0, 1], lam[1, 1]
    s11, s12, s22 = sigma[0, 0], sigma[0, 1], sigma[1, 1]
    num = (l12 + s12) * (l12 + l22) - (l11 + l12) * (l22 + s22)
    den = (l12 + s12) * (l11 + l12) - (l12 + l22) * (l11 + s11)
    _denominator_ok(den, lam, sigma, 2)
    return AnaTheta("max_corr", float(num / den))


def ana_estimate(record: DecomposedDeltaRecord, theta: AnaTheta | float) -> DeltaEstimate:
    """Proxy estimate delta2 + theta*delta1 with variance conditional on the effect."""
    if not isinstance(theta, AnaTheta):
        theta = AnaTheta("fixed", float(theta))
    t = theta.theta
    s = record.sigma
    var = s[1, 1] + t**2 * s[0, 0] + 2 * t * s[0, 1]
    method = {"min_error": "ana_min_err", "max_corr": "ana_max_corr"}.get(
        theta.objective, "ana_component"
    )
    return DeltaEstimate(
        float(record.delta[1] + t * record.delta[0]),
        max(float(var), 0.0),
        method,
        1,
        1,
        {"experiment_id": record.experiment_id, "theta": t, "objective": theta.objective},
    )


@dataclass
class Scorecard:
    alpha: float
    counts: dict[str, int]
    rows: list[dict[str, Any]] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "n_experiments": len(self.rows),
            "significant_counts": self.counts,
            "experiments": self.rows,
        }

    def tidy_rows(self) -> list[dict[str, Any]]:
        """(experiment, method, estimate, variance, z) rows for plotting."""
        out = []
        for row in self.rows:
            for m in SCORECARD_METHODS:
                out.append(
                    {
                        "experiment": row["experiment_id"],
                        "method": m,
                        "estimate": row[m],
                        "variance": row[f"{m}_var"],
                        "z": row[f"{m}_z"],
                    }
                )
            for m in ("bayes", "bayes_undecomposed"):
                out.append(
                    {
                        "experiment": row["experiment_id"],
                        "method": m,
                        "estimate": row[f"{m}_mean"],
                        "variance": row[f"{m}_var"],
                        "z": row[f"{m}_z"],
                    }
                )
        return out


def experiment_row(
    record: DecomposedDeltaRecord, prior: AnaPrior, alpha: float
) -> dict[str, Any]:
    """All per-experiment estimates, z-tests and posterior summaries."""
    s = record.sigma
    d1, d2 = (float(v) for v in record.delta)
    t_err = theta_min_error(prior, s)
    t_corr = theta_max_corr(prior, s)
    freq = {
        "naive": (d1 + d2, float(s.sum())),
        "delta1": (d1, float(s[0, 0])),
        "delta2": (d2, float(s[1, 1])),
    }
    for name, th in (("ana_corr", t_corr), ("ana_err", t_err)):
        est = ana_estimate(record, th)
        freq[name] = (est.estimate, est.variance)
    row: dict[str, Any] = {"experiment_id": record.experiment_id}
    p_values = {}
    significant = {}
    for name, (est, var) in freq.items():
        z = z_score(est, var)
        row[name] = est
        row[f"{name}_var"] = var
        row[f"{name}_z"] = z
        p_values[name] = two_sided_p(z)
        significant[name] = bool(var > 0 and p_values[name] < alpha)
    row["theta_err"] = t_err.theta
    row["theta_corr"] = t_corr.theta
    post = posterior(prior, record)
    flat = posterior_undecomposed(prior, record)
    row.update(
        bayes_mean=post.mean,
        bayes_var=post.variance,
        bayes_z=post.z_score,
        bayes_weights=list(post.weights),
        bayes_undecomposed_mean=flat.mean,
        bayes_undecomposed_var=flat.variance,
        bayes_undecomposed_z=flat.z_score,
        p_values=p_values,
        significant=significant,
    )
    return row


def significance_scorecard(
    records: Sequence[DecomposedDeltaRecord], prior: AnaPrior, alpha: float = 0.05
) -> Scorecard:
    """Count two-sided z-test rejections per estimator across experiments."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    rows = [experiment_row(r, prior, alpha) for r in records]
    counts = {m: sum(r["significant"][m] for r in rows) for m in SCORECARD_METHODS}
    return Scorecard(alpha, counts, rows)
