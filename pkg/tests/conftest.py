import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from torus_gauge.manifold import Grid4

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def grid4():
    return Grid4(4, 1.0)


@pytest.fixture
def grid8():
    return Grid4(8, 1.0)


def philox(seed):
    return np.random.Generator(np.random.Philox(key=seed))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record_acceptance(number, name, ok, detail):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
