import numpy as np
import pytest

from augment_vr.data import ExperimentData

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_data(y_t, y_c, extra=None, schema=None, experiment_id="t"):
    """Small helper: ExperimentData from per-group outcome lists."""
    y_t, y_c = np.asarray(y_t, float), np.asarray(y_c, float)
    mask = np.r_[np.ones(len(y_t), bool), np.zeros(len(y_c), bool)]
    columns = {"y": np.r_[y_t, y_c]}
    schema = dict(schema or {"y": "outcome"})
    for name, (vt, vc) in (extra or {}).items():
        columns[name] = np.r_[np.asarray(vt, float), np.asarray(vc, float)]
        schema.setdefault(name, "pre_period")
    return ExperimentData(experiment_id, mask, columns, schema)


@pytest.fixture
def reference_matrices():
    from augment_vr.simulator import REFERENCE_LAMBDA, REFERENCE_SIGMA

    return REFERENCE_LAMBDA.copy(), REFERENCE_SIGMA.copy()
