import numpy as np
import pytest

from noniid_qlearn.linalg import ket


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def plus():
    return np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0)


@pytest.fixture
def zero():
    return ket(0, 2)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line per acceptance criterion."""

    def emit(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
