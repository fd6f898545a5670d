import numpy as np
import pytest

from dipoleorient.cloud import PointCloud
from dipoleorient.evaluation import SyntheticShape, generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sphere_2k():
    return generate(SyntheticShape("sphere", 2000, 0.0, seed=7))


def plane_grid(n=20, spacing=0.05, z=0.0):
    g = np.arange(n) * spacing
    x, y = np.meshgrid(g, g, indexing="ij")
    pos = np.column_stack([x.ravel(), y.ravel(), np.full(n * n, z)])
    return PointCloud(pos)


def random_unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# acceptance criteria append (number, title, passed, detail) here
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {num:>2}. {title}: {detail}")
