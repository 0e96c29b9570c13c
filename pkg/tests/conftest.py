import numpy as np
import pytest

from mspk.model import validate_model
from mspk.parisi import make_params


@pytest.fixture
def ref_spec():
    return validate_model({"species": ["a", "b"], "lambda": [0.5, 0.5],
                           "delta_sq": [[1.0, 0.5], [0.5, 1.0]]})


@pytest.fixture
def ref_params():
    return make_params([0.4, 0.8], {"a": [0.0, 0.3, 1.0], "b": [0.0, 0.5, 1.0]})


@pytest.fixture
def zero_spec():
    return validate_model({"species": ["a", "b"], "lambda": [0.5, 0.5],
                           "delta_sq": [[0.0, 0.0], [0.0, 0.0]]})


@pytest.fixture
def weak_spec():
    return validate_model({"species": ["a"], "lambda": [1.0], "delta_sq": [[0.09]]})


def mean_se(values):
    values = np.asarray(values, dtype=float)
    return values.mean(), values.std(ddof=1) / np.sqrt(len(values))


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
