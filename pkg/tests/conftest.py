import os
import sys

import pytest
from hypothesis import HealthCheck, settings

from flowsplit.scenarios import load_scenario

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small():
    return load_scenario("small").topology


@pytest.fixture(scope="session")
def medium():
    return load_scenario("medium").topology


@pytest.fixture(scope="session")
def large():
    return load_scenario("large").topology


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
