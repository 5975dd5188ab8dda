import sys
from pathlib import Path

import pytest

from bohmpair.wavefield import SlitParams, StateConfig

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def slits():
    return SlitParams(0.1, 0.5)


@pytest.fixture
def state(slits):
    return StateConfig(slits, slits, 0.0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
