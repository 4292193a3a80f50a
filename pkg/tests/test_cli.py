import csv
import json
import subprocess
import sys

import pytest

from augment_vr.cli import RunConfig, main, run
from augment_vr.simulator import REFERENCE_LAMBDA, REFERENCE_SIGMA


@pytest.fixture
def unit_csv(tmp_path):
    path = tmp_path / "exp.csv"
    assert main(["simulate", "unit", "--n-units", "2000", "--rho", "0.7", "--delta", "0.1",
                 "--seed", "5", "--out", str(path)]) == 0
    return path


@pytest.fixture
def deltas_json(tmp_path):
    path = tmp_path / "deltas.json"
    assert main(["simulate", "ana", "--n-experiments", "25", "--seed", "3", "--out", str(path)]) == 0
    return path


def read(path):
    return json.loads(path.read_text())


def test_cuped_happy_path(unit_csv, tmp_path):
    out = tmp_path / "r.json"
    assert main(["cuped", "--data", str(unit_csv), "--metric", "mean:y", "--cov", "mean:x_pre", "--out", str(out)]) == 0
    res = read(out)
    assert res["method"] == "cuped"
    assert 0 < res["variance_reduction_factor"] < 1
    assert len(res["theta"]) == 1
    assert res["seed"] is None
    assert 0 <= res["p_value"] <= 1


def test_cuped_percentile_requires_seed(unit_csv, capsys):
    assert main(["cuped", "--data", str(unit_csv), "--metric", "p50:y", "--cov", "p50:x_pre"]) == 2
    assert "--seed" in capsys.readouterr().err


def test_ancova_variant(unit_csv, tmp_path):
    out = tmp_path / "a.json"
    assert main(["ancova", "--variant", "2", "--data", str(unit_csv), "--outcome", "y",
                 "--covariate", "x_pre", "--out", str(out)]) == 0
    res = read(out)
    assert res["method"] == "ancova2"
    assert res["variance"] >= 0


def test_analyze_metrics(unit_csv, tmp_path):
    out = tmp_path / "n.json"
    assert main(["analyze", "--data", str(unit_csv), "--metric", "mean:y", "--metric", "p90:y",
                 "--seed", "1", "--resamples", "200", "--out", str(out)]) == 0
    res = read(out)
    assert [r["metric"] for r in res["results"]] == ["mean:y", "p90:y"]
    assert res["results"][1]["seed"] == 1


def test_ana_fit_and_apply_min_error(tmp_path):
    # Prior equal to the reference matrices; every record has the reference noise covariance.
    prior = tmp_path / "prior.json"
    prior.write_text(json.dumps({"lambda": REFERENCE_LAMBDA.tolist(), "mean_sigma": REFERENCE_SIGMA.tolist(), "n_experiments": 25}))
    data = tmp_path / "d.json"
    data.write_text(json.dumps([{"experiment_id": "x", "delta": [1, 1], "sigma": REFERENCE_SIGMA.tolist()}]))
    out = tmp_path / "rows.json"
    assert main(["ana", "apply", "--prior", str(prior), "--data", str(data), "--objective", "min-error",
                 "--out", str(out)]) == 0
    (row,) = read(out)["experiments"]
    assert row["theta_err"] == pytest.approx(0.0885, abs=1e-4)
    assert row["ana_min_err"] == pytest.approx(1.0885, abs=1e-4)
    assert "theta_corr" not in row and "ana_max_corr" not in row
    for key in ("naive", "delta1", "delta2", "bayes_mean", "bayes_var", "bayes_z", "p_values"):
        assert key in row


def test_ana_fit_writes_prior(deltas_json, tmp_path):
    out = tmp_path / "prior.json"
    assert main(["ana", "fit", "--data", str(deltas_json), "--out", str(out)]) == 0
    prior = read(out)
    assert set(prior) == {"lambda", "mean_sigma", "n_experiments"}
    assert prior["n_experiments"] == 25


def test_scorecard_outputs(deltas_json, tmp_path):
    out, tidy = tmp_path / "s.json", tmp_path / "s.csv"
    assert main(["scorecard", "--data", str(deltas_json), "--out", str(out), "--csv", str(tidy)]) == 0
    card = read(out)
    assert set(card["significant_counts"]) == {"naive", "delta1", "delta2", "ana_corr", "ana_err"}
    with tidy.open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0].keys() == {"experiment", "method", "estimate", "variance", "z"}
    assert len(rows) == 25 * 7


def test_truth_sidecar_written(deltas_json):
    truth = deltas_json.with_name("truth.json")
    assert truth.exists()
    assert "truth" in read(truth)
    assert "truth" not in deltas_json.read_text()


def test_usage_errors_exit_2(capsys, unit_csv):
    assert run(RunConfig("cuped", data=unit_csv, metrics=["mean:y"])) == 2
    assert "--cov" in capsys.readouterr().err
    assert run(RunConfig("ancova", data=unit_csv, outcome="y")) == 2
    assert run(RunConfig("simulate", sim={})) == 2
    assert run(RunConfig("analyze", data=unit_csv, metrics=["bogus"])) == 2
    with pytest.raises(SystemExit) as err:
        main(["cuped", "--data", str(unit_csv)])
    assert err.value.code == 2


def test_data_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("unit_id,assignment,y\na,treatment,1\nb,treatment,2\n")
    assert main(["analyze", "--data", str(bad), "--metric", "mean:y"]) == 1
    assert "EmptyGroup" in capsys.readouterr().err
    missing = tmp_path / "missing.json"
    assert main(["ana", "fit", "--data", str(missing)]) == 1
    indefinite = tmp_path / "ind.json"
    indefinite.write_text(json.dumps([{"experiment_id": "q", "delta": [0, 0], "sigma": [[1, 2], [2, 1]]}] * 2))
    assert main(["ana", "fit", "--data", str(indefinite)]) == 1
    assert "NotPositiveSemidefinite" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    out = tmp_path / "u.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "augment_vr", "simulate", "unit", "--n-units", "50", "--seed", "1", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["seed"] == 1
    assert out.exists()
