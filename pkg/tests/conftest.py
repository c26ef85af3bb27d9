import pytest

from rmsde.model import ModelParams

# (criterion, passed, detail) lines filled in by test_acceptance.py
ACCEPTANCE_LINES = []


@pytest.fixture
def base_params():
    """(k, m, c) = (3, 2, 0.8) at omega = 100, i.e. rho = 0.1."""
    return ModelParams(3.0, 2.0, 0.8, 100.0)


@pytest.fixture
def subcritical_params():
    return ModelParams(1.0, 0.8, 0.8, 100.0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE_LINES):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:2d} {name}: {detail}")
