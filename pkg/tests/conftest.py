import numpy as np
import pytest

from isinglab.ising import BETA_C

_ACCEPTANCE_LINES = []


@pytest.fixture
def beta_c():
    return BETA_C


@pytest.fixture
def acceptance_log():
    """Record one pass/fail line per acceptance criterion; echoed in the terminal summary."""

    def log(k, ok, detail):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok

    return log


def pytest_configure(config):
    np.set_printoptions(precision=6, suppress=True)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
