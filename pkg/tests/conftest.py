import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bandpolicy import CANONICAL, REFERENCE_PARAMS, find_barrier_roots, solve_band  # noqa: E402


@pytest.fixture(scope="session")
def params():
    return REFERENCE_PARAMS


@pytest.fixture(scope="session")
def yld():
    return CANONICAL


@pytest.fixture(scope="session")
def roots(params, yld):
    return find_barrier_roots(params, yld)


@pytest.fixture(scope="session")
def band(params, yld, roots):
    return solve_band(roots[0].b, params, yld)


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
