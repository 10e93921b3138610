import numpy as np
import pytest

from decentlam.problems import generate_regression
from decentlam.verify import reference_instance


@pytest.fixture(scope="session")
def mesh8():
    """Mesh n=8, d=30, m=50 instance used by the reproduction configs (seed 42)."""
    return reference_instance()


@pytest.fixture(scope="session")
def tiny():
    return generate_regression(4, 3, 6, hetero=0.5, noise_mag=0.1, seed=7, sigma_sq=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
