import numpy as np
import pytest

from rnnfilter.model import LinearGaussianModel, scalar_model


@pytest.fixture
def scalar_a098_b2():
    return scalar_model(0.98, 2.0)


@pytest.fixture
def model_2d():
    """A small 2-state, 2-observation model with correlated noises."""
    return LinearGaussianModel(
        f_matrix=[[0.9, 0.2], [-0.1, 0.8]],
        h_matrix=[[1.0, 0.0], [0.5, 1.0]],
        q_cov=[[0.5, 0.1], [0.1, 0.3]],
        r_cov=[[1.0, 0.2], [0.2, 0.7]],
        init_mean=[1.0, -1.0],
        init_cov=[[2.0, 0.3], [0.3, 1.5]],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
