"""Variance reduction for randomized experiments by estimator augmentation."""

from .ana import (
    AnaPosterior,
    AnaPrior,
    AnaTheta,
    ana_estimate,
    contraction_gap,
    fit_prior,
    posterior,
    posterior_undecomposed,
    significance_scorecard,
    theta_max_corr,
    theta_min_error,
)
from .cuped import (
    Augmentation,
    CupedResult,
    ancova_estimate,
    augmented_delta,
    cuped_estimate,
    optimal_theta,
    optimal_theta_multi,
)
from .data import (
    DecomposedDeltaRecord,
    ExperimentData,
    UnitRecord,
    load_decomposed_json,
    load_unit_csv,
)
from .metrics import DeltaEstimate, MetricSpec, bootstrap_variance, metric_value, naive_delta, parse_metric
from .simulator import AnaScenario, SimScenario, gen_ana_population, gen_experiment

__version__ = "0.1.0"
