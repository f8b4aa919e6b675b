import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pvsurf.geometry import FlatTorus, Plane, Sphere

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SURFACES = [Plane(), Sphere(1.0), Sphere(2.5), FlatTorus((1.0, 1.0)), FlatTorus((1.0, 2.5)), FlatTorus((3.0, 1.2))]


def surface_id(s):
    return s.kind + ("" if s.kind == "plane" else str(getattr(s, "radius", None) or s.periods))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=SURFACES, ids=surface_id)
def surface(request):
    return request.param


# -- acceptance report -----------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``record(number, title, ok, detail)`` stores one PASS/FAIL line per acceptance criterion."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number:2d}  {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
