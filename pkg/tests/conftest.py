import logging
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dagbnb.datagen import GenConfig, make_instance
from dagbnb.formulation import build_problem

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=15,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(autouse=True)
def _quiet_stop_warnings():
    lg = logging.getLogger("dagbnb.bnb")
    old = lg.level
    lg.setLevel(logging.ERROR)
    yield
    lg.setLevel(old)


@pytest.fixture
def small_instance():
    return make_instance(GenConfig(m=5, n=100, seed=11))


@pytest.fixture
def small_spec(small_instance):
    spec, _ = build_problem(small_instance.data, small_instance.moral)
    return spec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
