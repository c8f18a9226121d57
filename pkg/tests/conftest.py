import numpy as np
import pytest
from hypothesis import strategies as st

from asymsphere.asymmetry import AsymmetricCovariance, AsymmetrySpec
from asymsphere.covariance import preset


def random_sphere(rng, n, dim=2):
    x = rng.standard_normal((n, dim + 1))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@st.composite
def unit_vectors(draw, dim=2):
    coords = draw(st.lists(st.floats(-1, 1, allow_nan=False), min_size=dim + 1, max_size=dim + 1))
    v = np.asarray(coords, dtype=float)
    if np.linalg.norm(v) < 1e-3:
        v = np.eye(dim + 1)[0]
    return v / np.linalg.norm(v)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def m1_asym():
    return AsymmetricCovariance(preset("M1"), AsymmetrySpec(eta=0.6))


@pytest.fixture(params=["M1", "M2", "M3"])
def family(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
