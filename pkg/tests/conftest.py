import os
import sys

import pytest
from hypothesis import HealthCheck, settings

from octreemg import presets

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("ci", suppress_health_check=(HealthCheck.too_slow,), deadline=None)
settings.load_profile("ci")


@pytest.fixture
def fig2():
    return presets.fig2(4)


@pytest.fixture
def fig6():
    return presets.fig6(4)


def corpus(n=4):
    """Small forests covering uniform, 2D and 3D refined layouts."""
    return {
        "fig1": presets.fig1(n),
        "fig2": presets.fig2(n),
        "fig6": presets.fig6(n),
        "uniform2d": presets.uniform(2, (3, 2), n),
        "uniform3d": presets.uniform(3, (2, 2, 2), n),
    }


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
