import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_CRITERIA: dict = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report():
    """Record one acceptance verdict line; printed again in the terminal summary."""
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"CRITERION {number} {'PASS' if passed else 'FAIL'} {detail}"
        _CRITERIA[(number, 0)] = line
        print(line)
    return record


@pytest.fixture
def note():
    """Record an informational line attached to a criterion, without a verdict."""
    def record(number: int, detail: str) -> None:
        line = f"CRITERION {number} NOTE {detail}"
        _CRITERIA[(number, 1, len(_CRITERIA))] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
