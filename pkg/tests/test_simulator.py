import json

import numpy as np
import pytest

from augment_vr.cuped import cuped_estimate
from augment_vr.metrics import MetricSpec, naive_delta
from augment_vr.simulator import (
    REFERENCE_LAMBDA,
    REFERENCE_SIGMA,
    AnaScenario,
    SimScenario,
    gen_ana_population,
    gen_experiment,
    write_truth_json,
)

Y, X = MetricSpec.mean("y"), MetricSpec.mean("x_pre")


def test_same_seed_same_data():
    s = SimScenario(n_units=500, rho_pre=0.3, true_delta=0.2, seed=42)
    assert gen_experiment(s).same_values(gen_experiment(s))
    other = SimScenario(n_units=500, rho_pre=0.3, true_delta=0.2, seed=43)
    assert not gen_experiment(s).same_values(gen_experiment(other))


def test_uncorrelated_pre_period():
    d = gen_experiment(SimScenario(n_units=100_000, rho_pre=0.0, seed=1))
    assert abs(np.corrcoef(d.column("x_pre"), d.column("y"))[0, 1]) < 0.02


def test_correlation_and_effect_are_planted():
    d = gen_experiment(SimScenario(n_units=200_000, rho_pre=0.8, true_delta=0.5, seed=2))
    ctrl = ~d.treatment
    assert np.corrcoef(d.column("x_pre")[ctrl], d.column("y")[ctrl])[0, 1] == pytest.approx(0.8, abs=0.01)
    assert naive_delta(d, Y).estimate == pytest.approx(0.5, abs=0.02)


def test_lognormal_outcomes_positive():
    d = gen_experiment(SimScenario(n_units=1000, outcome_dist="lognormal", rho_pre=0.5, seed=3))
    assert (d.column("y") > 0).all() and (d.column("x_pre") > 0).all()


def test_balanced_assignment():
    d = gen_experiment(SimScenario(n_units=1001, p_treatment=0.3, balanced=True, seed=1))
    assert d.n_treatment == 300


@pytest.mark.parametrize(
    "kwargs",
    [dict(n_units=3), dict(n_units=100, rho_pre=1.0), dict(n_units=10, p_treatment=0.1), dict(n_units=10, sd=0)],
)
def test_invalid_scenarios(kwargs):
    with pytest.raises(ValueError):
        SimScenario(**kwargs)


@pytest.mark.slow
def test_null_calibration():
    # 2000 null experiments: naive and CUPED z-tests both reject at about the nominal 5%.
    naive_hits = cuped_hits = 0
    for seed in range(2000):
        d = gen_experiment(SimScenario(n_units=400, rho_pre=0.7, seed=seed))
        naive_hits += naive_delta(d, Y).p_value < 0.05
        cuped_hits += cuped_estimate(d, Y, [X]).delta.p_value < 0.05
    assert 0.035 <= naive_hits / 2000 <= 0.065
    assert 0.035 <= cuped_hits / 2000 <= 0.065


def test_zero_lambda_population():
    pop = gen_ana_population(AnaScenario(2000, np.zeros((2, 2)), REFERENCE_SIGMA, seed=5))
    np.testing.assert_array_equal(pop.truths, 0.0)
    deltas = np.array([r.delta for r in pop.records])
    se = np.sqrt(np.diag(REFERENCE_SIGMA) / len(deltas))
    assert np.all(np.abs(deltas.mean(axis=0)) < 3 * se)


def test_no_dispersion_keeps_sigma():
    pop = gen_ana_population(AnaScenario(50, REFERENCE_LAMBDA, REFERENCE_SIGMA, seed=0))
    for r in pop.records:
        np.testing.assert_array_equal(r.sigma, REFERENCE_SIGMA)


def test_dispersion_varies_sigma_and_stays_psd():
    pop = gen_ana_population(AnaScenario(200, REFERENCE_LAMBDA, REFERENCE_SIGMA, sigma_dispersion=0.5, seed=0))
    diag = np.array([np.diag(r.sigma) for r in pop.records])
    assert diag.std(axis=0).min() > 0
    assert all(np.linalg.eigvalsh(r.sigma).min() >= 0 for r in pop.records)
    assert np.all(diag >= 0.5 * np.diag(REFERENCE_SIGMA) - 1e-12)


def test_population_deterministic():
    s = AnaScenario(30, REFERENCE_LAMBDA, REFERENCE_SIGMA, sigma_dispersion=0.2, seed=9)
    a, b = gen_ana_population(s), gen_ana_population(s)
    np.testing.assert_array_equal(a.truths, b.truths)
    assert all(np.array_equal(x.delta, y.delta) and np.array_equal(x.sigma, y.sigma) for x, y in zip(a.records, b.records))


def test_population_prefix_stable():
    # experiment k depends only on (seed, k)
    small = gen_ana_population(AnaScenario(10, REFERENCE_LAMBDA, REFERENCE_SIGMA, seed=3))
    big = gen_ana_population(AnaScenario(20, REFERENCE_LAMBDA, REFERENCE_SIGMA, seed=3))
    np.testing.assert_array_equal(small.truths, big.truths[:10])


@pytest.mark.slow
def test_moment_fidelity():
    pop = gen_ana_population(AnaScenario(100_000, REFERENCE_LAMBDA, REFERENCE_SIGMA, seed=11))
    cov = np.cov(np.array([r.delta for r in pop.records]), rowvar=False)
    target = REFERENCE_LAMBDA + REFERENCE_SIGMA
    assert np.all(np.abs(cov - target) <= 0.02 * np.abs(target))


def test_truth_sidecar(tmp_path):
    pop = gen_ana_population(AnaScenario(3, REFERENCE_LAMBDA, REFERENCE_SIGMA, seed=1))
    write_truth_json(pop, tmp_path / "truth.json", seed=1)
    payload = json.loads((tmp_path / "truth.json").read_text())
    assert payload["seed"] == 1
    assert [t["experiment_id"] for t in payload["truth"]] == [r.experiment_id for r in pop.records]
    assert np.allclose([t["delta"] for t in payload["truth"]], pop.truths)
