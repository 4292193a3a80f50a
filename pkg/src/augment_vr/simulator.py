"""Synthetic experiments with known ground truth.

``gen_experiment`` draws unit-level (x_pre, y) data; ``gen_ana_population``
draws experiment-level decomposed deltas. Both are deterministic functions of
their scenario, seed included.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .data import DecomposedDeltaRecord, ExperimentData, clean_covariance

# Reference prior and noise covariances for a decomposed metric (rescaled units).
REFERENCE_LAMBDA = np.array([[0.576, -0.896], [-0.896, 4.329]])
REFERENCE_SIGMA = np.array([[4.020, 0.169], [0.169, 0.811]])

UNIT_SCHEMA = {"y": "outcome", "x_pre": "pre_period"}


@dataclass(frozen=True)
class SimScenario:
    """Unit-level scenario.

    ``rho_pre`` is the correlation of x_pre and y on the normal scale (also for
    lognormal outcomes, where exp() is applied afterwards). ``treatment_slope``
    adds ``slope * (x_pre - E[x_pre])`` to treated outcomes, making the
    treatment and control covariances differ without moving the average
    effect. ``balanced`` assigns exactly round(p * n) units to treatment
    instead of independent coin flips.
    """

    n_units: int
    p_treatment: float = 0.5
    rho_pre: float = 0.0
    true_delta: float = 0.0
    outcome_dist: str = "normal"
    mu: float = 0.0
    sd: float = 1.0
    seed: int = 0
    treatment_slope: float = 0.0
    balanced: bool = False
    experiment_id: str = "sim"

    def __post_init__(self) -> None:
        if not abs(self.rho_pre) < 1:
            raise ValueError("|rho_pre| must be < 1")
        if self.n_units < 4:
            raise ValueError("n_units must be >= 4")
        if not 0 < self.p_treatment < 1:
            raise ValueError("p_treatment must lie in (0, 1)")
        if self.p_treatment * self.n_units < 2 or (1 - self.p_treatment) * self.n_units < 2:
            raise ValueError("each group needs an expected size of at least 2")
        if self.outcome_dist not in ("normal", "lognormal"):
            raise ValueError(f"unknown outcome_dist {self.outcome_dist!r}")
        if self.sd <= 0:
            raise ValueError("sd must be positive")
        rng.check_seed(self.seed)


def gen_experiment(scenario: SimScenario) -> ExperimentData:
    s = scenario
    gen = rng.stream(s.seed)
    z = gen.standard_normal((s.n_units, 2))
    x = s.mu + s.sd * z[:, 0]
    y = s.mu + s.sd * (s.rho_pre * z[:, 0] + math.sqrt(1 - s.rho_pre**2) * z[:, 1])
    x_mean = s.mu
    if s.outcome_dist == "lognormal":
        x, y = np.exp(x), np.exp(y)
        x_mean = math.exp(s.mu + s.sd**2 / 2)
    if s.balanced:
        n_t = int(round(s.p_treatment * s.n_units))
        treated = np.zeros(s.n_units, dtype=bool)
        treated[gen.permutation(s.n_units)[:n_t]] = True
    else:
        treated = gen.random(s.n_units) < s.p_treatment
    y = y + treated * (s.true_delta + s.treatment_slope * (x - x_mean))
    return ExperimentData(s.experiment_id, treated, {"y": y, "x_pre": x}, UNIT_SCHEMA)


@dataclass(frozen=True, eq=False)
class AnaScenario:
    """Experiment-level scenario for decomposed deltas.

    With ``sigma_dispersion`` d > 0 each experiment's noise variances are
    scaled by independent factors 1 + d*u, u ~ U[-1, 1]; the covariance is
    kept and clamped to stay PSD. d must be < 1.
    """

    n_experiments: int
    lam: np.ndarray
    sigma: np.ndarray
    sigma_dispersion: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_experiments < 1:
            raise ValueError("n_experiments must be >= 1")
        if not 0 <= self.sigma_dispersion < 1:
            raise ValueError("sigma_dispersion must lie in [0, 1)")
        object.__setattr__(self, "lam", clean_covariance(np.asarray(self.lam, float), "lambda"))
        object.__setattr__(self, "sigma", clean_covariance(np.asarray(self.sigma, float), "sigma"))
        rng.check_seed(self.seed)


@dataclass(frozen=True)
class AnaPopulation:
    records: list[DecomposedDeltaRecord]
    truths: np.ndarray


def _chol(m: np.ndarray) -> np.ndarray:
    # Eigen-factor instead of Cholesky so singular PSD matrices (e.g. zero) work.
    vals, vecs = np.linalg.eigh(m)
    return vecs * np.sqrt(np.clip(vals, 0, None))


def experiment_sigma(scenario: AnaScenario, gen: np.random.Generator) -> np.ndarray:
    sigma = scenario.sigma
    if scenario.sigma_dispersion == 0:
        return sigma.copy()
    u = gen.uniform(-1, 1, 2)
    diag = np.diag(sigma) * (1 + scenario.sigma_dispersion * u)
    bound = math.sqrt(diag[0] * diag[1])
    off = float(np.clip(sigma[0, 1], -bound, bound))
    return np.array([[diag[0], off], [off, diag[1]]])


def gen_ana_population(scenario: AnaScenario) -> AnaPopulation:
    """Draw effect ~ N(0, lam) and noise ~ N(0, sigma_k) for each experiment.

    Experiment ``k`` uses Philox stream ``k`` of the scenario seed.
    """
    lam_f = _chol(scenario.lam)
    records = []
    truths = np.empty((scenario.n_experiments, 2))
    for k in range(scenario.n_experiments):
        gen = rng.stream(scenario.seed, k)
        sigma_k = experiment_sigma(scenario, gen)
        z = gen.standard_normal(4)
        effect = lam_f @ z[:2]
        noise = _chol(sigma_k) @ z[2:]
        truths[k] = effect
        records.append(DecomposedDeltaRecord(f"exp{k:05d}", effect + noise, sigma_k))
    return AnaPopulation(records, truths)


def write_truth_json(population: AnaPopulation, path: str | Path, seed: int | None = None) -> None:
    payload = {
        "seed": seed,
        "truth": [
            {"experiment_id": r.experiment_id, "delta": [float(v) for v in t]}
            for r, t in zip(population.records, population.truths)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
