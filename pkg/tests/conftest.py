import numpy as np
import pytest

from activedc.features import FeaturePool

ACCEPTANCE_LINES = []


def random_pool(rng, n, d):
    x = rng.standard_normal((n, d))
    return FeaturePool(x / np.linalg.norm(x, axis=1, keepdims=True), normalized=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
