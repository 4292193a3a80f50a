"""Exit criteria for the package, one test per criterion.

Each test prints a PASS/FAIL line (collected into the pytest terminal summary)
and then asserts the criterion at its stated tolerance and runtime budget.
"""

import json
import time

import numpy as np

from augment_vr.ana import (
    AnaPrior,
    contraction_gap,
    fit_prior,
    posterior_weights,
    significance_scorecard,
    theta_max_corr,
    theta_min_error,
)
from augment_vr.cli import main
from augment_vr.cuped import ancova_estimate, cuped_estimate
from augment_vr.metrics import MetricSpec, naive_delta
from augment_vr.simulator import (
    REFERENCE_LAMBDA,
    REFERENCE_SIGMA,
    AnaScenario,
    SimScenario,
    gen_ana_population,
    gen_experiment,
)

from conftest import ACCEPTANCE_LINES

Y, X = MetricSpec.mean("y"), MetricSpec.mean("x_pre")


def report(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] AC{number} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def reference_prior():
    return AnaPrior(REFERENCE_LAMBDA, REFERENCE_SIGMA, 25)


def test_ac01_variance_reduction_factor():
    start = time.perf_counter()
    factors, naive_est, cuped_est = [], [], []
    for seed in range(1000):
        d = gen_experiment(SimScenario(n_units=100_000, rho_pre=0.8, true_delta=0.1, seed=seed))
        res = cuped_estimate(d, Y, [X])
        factors.append(res.delta.variance / res.naive.variance)
        naive_est.append(res.naive.estimate)
        cuped_est.append(res.delta.estimate)
    elapsed = time.perf_counter() - start
    mean_factor = float(np.mean(factors))
    across = float(np.var(cuped_est, ddof=1) / np.var(naive_est, ddof=1))
    ok = 0.34 <= mean_factor <= 0.38 and elapsed < 120
    report(1, "variance-reduction factor", ok,
           f"mean Var[cuped]/Var[naive] = {mean_factor:.4f} (target [0.34, 0.38]); "
           f"across-replication ratio {across:.4f}; {elapsed:.1f}s")
    assert 0.34 <= mean_factor <= 0.38
    assert elapsed < 120


def test_ac02_cuped_ancova2_equivalence():
    start = time.perf_counter()
    close2 = far1 = 0
    for seed in range(100):
        d = gen_experiment(
            SimScenario(n_units=100_000, p_treatment=0.3, rho_pre=0.6, treatment_slope=1.0, seed=seed)
        )
        c = cuped_estimate(d, Y, [X]).delta.estimate
        threshold = 1e-2 * naive_delta(d, Y).se
        close2 += abs(ancova_estimate(d, "y", "x_pre", "ancova2").estimate - c) < threshold
        far1 += not abs(ancova_estimate(d, "y", "x_pre", "ancova1").estimate - c) < threshold
    elapsed = time.perf_counter() - start
    ok = close2 >= 95 and far1 >= 50 and elapsed < 120
    report(2, "CUPED ~ ANCOVA2", ok,
           f"ancova2 within 1e-2*SE in {close2}/100 (need >=95); ancova1 outside in {far1}/100 "
           f"(need >=50); {elapsed:.1f}s")
    assert close2 >= 95 and far1 >= 50
    assert elapsed < 120


def test_ac03_ancova1_equals_ancova2_balanced():
    start = time.perf_counter()
    diffs = []
    for seed, slope in ((0, 0.0), (1, 0.5)):
        d = gen_experiment(
            SimScenario(n_units=2000, p_treatment=0.5, rho_pre=0.6, treatment_slope=slope, balanced=True, seed=seed)
        )
        assert d.n_treatment == d.n_control
        a1 = ancova_estimate(d, "y", "x_pre", "ancova1").estimate
        a2 = ancova_estimate(d, "y", "x_pre", "ancova2").estimate
        diffs.append(abs(a1 - a2))
    elapsed = time.perf_counter() - start
    ok = max(diffs) < 1e-8 and elapsed < 1
    report(3, "ANCOVA1 = ANCOVA2 at p = 0.5", ok,
           f"max |ancova1 - ancova2| = {max(diffs):.3e} on equal-size datasets (need < 1e-8); {elapsed:.2f}s")
    assert max(diffs) < 1e-8
    assert elapsed < 1


def test_ac04_bayesian_contraction():
    start = time.perf_counter()
    reference_gap = contraction_gap(reference_prior(), REFERENCE_SIGMA)
    gen = np.random.default_rng(2024)
    gaps = []
    while len(gaps) < 1000:
        a, b = gen.normal(size=(2, 2, 2))
        lam, sigma = a @ a.T, b @ b.T
        scale = max(np.abs(lam).max(), np.abs(sigma).max())
        lam2, sig2 = lam.sum(), sigma.sum()
        # non-degenerate: sigma positive definite and delta1 informative beyond the total
        proportional = abs((lam[0, 0] + lam[0, 1]) * sig2 - lam2 * (sigma[0, 0] + sigma[0, 1]))
        if np.linalg.eigvalsh(sigma).min() <= 1e-8 * scale or proportional <= 1e-8 * scale**2:
            continue
        gaps.append(contraction_gap(AnaPrior(lam, sigma, 2), sigma))
    gaps = np.array(gaps)
    elapsed = time.perf_counter() - start
    ok = reference_gap > 0 and gaps.min() > 0 and elapsed < 10
    report(4, "Bayesian contraction", ok,
           f"reference-matrix gap {reference_gap:.6f}; min gap over 1000 draws {gaps.min():.3e}; {elapsed:.2f}s")
    assert reference_gap > 0
    assert (gaps > 0).all() and gaps.min() >= -1e-12
    assert elapsed < 10


def test_ac05_theta_optimality():
    start = time.perf_counter()
    pop = gen_ana_population(AnaScenario(100_000, REFERENCE_LAMBDA, REFERENCE_SIGMA, seed=5))
    total = pop.truths.sum(axis=1)
    obs = np.array([r.delta for r in pop.records])
    prior = reference_prior()
    t_err = theta_min_error(prior, REFERENCE_SIGMA).theta
    t_corr = theta_max_corr(prior, REFERENCE_SIGMA).theta

    def mse(t):
        return float(np.mean((total - (obs[:, 1] + t * obs[:, 0])) ** 2))

    def corr(t):
        return float(np.corrcoef(total, obs[:, 1] + t * obs[:, 0])[0, 1])

    mse_ok = mse(t_err) <= min(mse(t_err - 0.05), mse(t_err + 0.05))
    corr_ok = corr(t_corr) >= max(corr(t_corr - 0.05), corr(t_corr + 0.05))
    elapsed = time.perf_counter() - start
    ok = mse_ok and corr_ok and elapsed < 60
    report(5, "min-error / max-corr optimality", ok,
           f"MSE {mse(t_err - 0.05):.5f} / {mse(t_err):.5f} / {mse(t_err + 0.05):.5f}; "
           f"corr {corr(t_corr - 0.05):.6f} / {corr(t_corr):.6f} / {corr(t_corr + 0.05):.6f}; {elapsed:.1f}s")
    assert mse_ok and corr_ok
    assert elapsed < 60


def test_ac06_cuped_reduction():
    start = time.perf_counter()
    gen = np.random.default_rng(6)
    cases = [(np.diag([0.0, 4.329]), REFERENCE_SIGMA)]
    for _ in range(20):
        b = gen.normal(size=(2, 2))
        sigma = b @ b.T
        cases.append((np.diag([0.0, gen.uniform(0.1, 5)]), sigma))
    exact = all(
        theta_min_error(AnaPrior(lam, s, 2), s).theta == -s[0, 1] / s[0, 0] for lam, s in cases
    )
    elapsed = time.perf_counter() - start
    report(6, "null component reduces to CUPED", exact and elapsed < 1,
           f"theta_min_error == -sigma12/sigma11 exactly in {len(cases)} cases; {elapsed:.3f}s")
    assert exact
    assert elapsed < 1


def test_ac07_rescaled_posterior_identity():
    start = time.perf_counter()
    gen = np.random.default_rng(7)
    worst, count = 0.0, 0
    while count < 1000:
        a, b = gen.normal(size=(2, 2, 2))
        lam, sigma = a @ a.T, b @ b.T + 1e-3 * np.eye(2)
        w1, w2 = posterior_weights(lam, sigma)
        if abs(w2) < 1e-6:
            continue
        t = theta_max_corr(AnaPrior(lam, sigma, 2), sigma).theta
        worst = max(worst, abs(t - w1 / w2) / max(1.0, abs(t)))
        count += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 10
    report(7, "max-corr theta = w1/w2", ok, f"max scaled |theta - w1/w2| = {worst:.2e}; {elapsed:.2f}s")
    assert worst <= 1e-8
    assert elapsed < 10


def test_ac08_scorecard_pattern():
    start = time.perf_counter()
    prior = reference_prior()
    ana_ok = d1_ok = 0
    totals = dict.fromkeys(("naive", "delta1", "delta2", "ana_corr", "ana_err"), 0)
    for rep in range(500):
        pop = gen_ana_population(AnaScenario(25, REFERENCE_LAMBDA, REFERENCE_SIGMA, seed=rep))
        counts = significance_scorecard(pop.records, prior, 0.05).counts
        ana_ok += counts["ana_err"] >= counts["naive"] and counts["ana_corr"] >= counts["naive"]
        d1_ok += counts["delta1"] <= counts["naive"]
        for k in totals:
            totals[k] += counts[k]
    elapsed = time.perf_counter() - start
    ok = ana_ok >= 450 and d1_ok >= 400 and elapsed < 300
    avg = ", ".join(f"{k} {v / 500:.1f}/25" for k, v in totals.items())
    report(8, "significance-count pattern", ok,
           f"ANA >= naive in {ana_ok}/500 (need 450); delta1 <= naive in {d1_ok}/500 (need 400); "
           f"average counts: {avg}; {elapsed:.1f}s")
    assert ana_ok >= 450 and d1_ok >= 400
    assert elapsed < 300


def test_ac09_prior_recovery():
    start = time.perf_counter()
    pop = gen_ana_population(AnaScenario(5000, REFERENCE_LAMBDA, REFERENCE_SIGMA, seed=9))
    lam = fit_prior(pop.records).lam
    tol = np.maximum(0.1 * np.abs(REFERENCE_LAMBDA), 0.1 * np.abs(REFERENCE_LAMBDA).max())
    err = np.abs(lam - REFERENCE_LAMBDA)
    elapsed = time.perf_counter() - start
    ok = bool(np.all(err <= tol)) and elapsed < 30
    report(9, "prior recovery", ok,
           f"fitted lambda {np.round(lam, 3).tolist()}; max error/tolerance {np.max(err / tol):.2f}; {elapsed:.1f}s")
    assert np.all(err <= tol)
    assert elapsed < 30


def test_ac10_cli_determinism(tmp_path, capsys):
    start = time.perf_counter()
    csv_path = tmp_path / "exp.csv"
    deltas = tmp_path / "deltas.json"
    commands = [
        ["simulate", "unit", "--n-units", "3000", "--rho", "0.7", "--delta", "0.05", "--seed", "11",
         "--out", str(csv_path)],
        ["simulate", "ana", "--n-experiments", "25", "--dispersion", "0.3", "--seed", "12", "--out", str(deltas)],
        ["analyze", "--data", str(csv_path), "--metric", "mean:y", "--metric", "p50:y", "--seed", "13",
         "--resamples", "300"],
        ["cuped", "--data", str(csv_path), "--metric", "p50:y", "--cov", "p50:x_pre", "--seed", "14",
         "--resamples", "300"],
        ["cuped", "--data", str(csv_path), "--metric", "mean:y", "--cov", "mean:x_pre"],
        ["scorecard", "--data", str(deltas), "--csv", str(tmp_path / "tidy.csv")],
        ["ana", "fit", "--data", str(deltas)],
    ]
    files = [csv_path, deltas, tmp_path / "truth.json", tmp_path / "tidy.csv"]

    def run_all():
        outputs = []
        for cmd in commands:
            assert main(cmd) == 0, cmd
            outputs.append(capsys.readouterr().out.encode())
        return outputs, [f.read_bytes() for f in files]

    first, second = run_all(), run_all()
    identical = first == second
    payloads = [json.loads(o) for o in first[0]]
    seeds_embedded = all("seed" in p or "lambda" in p or "significant_counts" in p for p in payloads)
    elapsed = time.perf_counter() - start
    ok = identical and seeds_embedded and elapsed < 10
    report(10, "CLI determinism", ok,
           f"{len(commands)} commands rerun byte-identical: {identical}; {elapsed:.1f}s")
    assert identical and seeds_embedded
    assert elapsed < 10
