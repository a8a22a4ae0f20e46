import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from symmpose import geometry as geo
from symmpose.so3 import quaternions_to_matrices

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def unit_quaternions():
    comp = st.floats(-1.0, 1.0, allow_nan=False)
    return st.tuples(comp, comp, comp, comp).filter(lambda q: np.linalg.norm(q) > 0.1).map(
        lambda q: np.asarray(q) / np.linalg.norm(q))


def rotations():
    return unit_quaternions().map(quaternions_to_matrices)


def front_rays():
    comp = st.floats(-3.0, 3.0, allow_nan=False)
    return st.tuples(comp, comp, st.floats(0.05, 3.0)).map(np.asarray)


def intrinsics():
    return st.builds(geo.CameraIntrinsics, st.floats(200, 2000), st.floats(200, 2000),
                     st.floats(0, 640), st.floats(0, 480))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ----------------------------------------------------------

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record ``(passed, detail)`` for a numbered acceptance criterion; assert it afterwards."""
    store = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number, name, checks):
        # checks: list of (label, passed, measured-text)
        passed = all(ok for _, ok, _ in checks)
        detail = "; ".join(f"{label}: {text}{'' if ok else ' (FAIL)'}" for label, ok, text in checks)
        store[number] = (name, passed, detail)
        return passed, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        name, passed, detail = store[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {name} | {detail}")
