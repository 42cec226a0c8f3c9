import numpy as np
import pytest

from narrownet.regions import build_example_net

# criterion number -> (passed, detail); filled by test_acceptance, printed at session end
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        ok, detail = ACCEPTANCE_LINES[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def rotation_net():
    return build_example_net("1")
