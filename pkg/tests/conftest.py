import functools

import pytest
from hypothesis import HealthCheck, settings

from feltloom import fixtures
from feltloom.program import emit
from feltloom.transforms import plan_method, profile_for

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

WORKPIECES = {
    "sphere": fixtures.sphere_model,
    "cylinder": fixtures.cylinder_model,
    "phone": fixtures.phone_model,
    "fish": fixtures.fish_model,
}


@functools.lru_cache(maxsize=None)
def workpiece(name):
    mesh = WORKPIECES[name]()
    return mesh, profile_for(mesh, 2.5)


@functools.lru_cache(maxsize=None)
def planned(name, method):
    """(plan, program, target profile) for a built-in workpiece; cached per session."""
    mesh, profile = workpiece(name)
    plan = plan_method(method, mesh, profile)
    return plan, emit(plan), profile


@pytest.fixture(scope="session")
def plan_for():
    return planned


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
