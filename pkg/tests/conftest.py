import numpy as np
import pytest
from hypothesis import settings

from uplift_policy.dataset import ExperimentDataset, TreatmentSet

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def make_dataset(t, y, X=None, ids=None, labels=("control", "treated"), propensities=None,
                 aux=None, feature_names=None):
    """Small in-memory experiment for hand-built test cases."""
    t = np.asarray(t, dtype=int)
    n = t.size
    if X is None:
        X = np.zeros((n, 1))
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if ids is None:
        ids = [f"c{i:03d}" for i in range(n)]
    if propensities is None:
        ts = TreatmentSet.uniform(labels)
    else:
        ts = TreatmentSet(tuple(labels), tuple(propensities))
    if feature_names is None:
        feature_names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
    return ExperimentDataset(ts, ids, X, t, y, feature_names, aux or {})


@pytest.fixture
def accept():
    """Record one acceptance line; the terminal summary prints them all."""

    def record(name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
