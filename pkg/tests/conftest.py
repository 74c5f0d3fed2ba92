import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria report one line each; they are collected here and
# printed at the end of the session so they show up without ``-s``.
ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion():
    def report(number, title, passed, detail):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:>2} {status}  {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
