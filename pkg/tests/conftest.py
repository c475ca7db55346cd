import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aisml2r.path_kernel import gbm
from aisml2r.payoffs import PayoffSpec

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def euro_model():
    return gbm(100.0, 0.06, 0.4, 1.0)


@pytest.fixture
def euro_payoff():
    return PayoffSpec.european_call(80.0, 0.06, 1.0)


@pytest.fixture
def lookback_model():
    return gbm(100.0, 0.15, 0.1, 1.0)


@pytest.fixture
def lookback_payoff():
    return PayoffSpec.partial_lookback_call(1.1, 0.15, 1.0)


class ConstantPayoff:
    """Payoff returning ``c`` on every path."""

    needs_min = False

    def __init__(self, c):
        self.c = c

    def __call__(self, x_T, x_min=None):
        return np.full(np.shape(x_T), self.c, dtype=float)


@pytest.fixture
def constant_payoff():
    return ConstantPayoff


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
