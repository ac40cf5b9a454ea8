import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from elastntd import BoundaryLoadBasis, build_rect_mesh, construct_all, grid_partition  # noqa: E402


@pytest.fixture(scope="session")
def mesh4():
    return build_rect_mesh(4, 4)


@pytest.fixture(scope="session")
def mesh8():
    return build_rect_mesh(8, 8)


@pytest.fixture(scope="session")
def part4(mesh4):
    return grid_partition(mesh4, 2, 2)


@pytest.fixture(scope="session")
def basis4(mesh4):
    return BoundaryLoadBasis(mesh4)


@pytest.fixture(scope="session")
def basis8(mesh8):
    return BoundaryLoadBasis(mesh8)


@pytest.fixture(scope="session")
def probe8(mesh8):
    """Opposite-corner 2x2-cell regions, one cell in from the boundary."""
    d1 = mesh8.cells_elements([(i, j) for i in (1, 2) for j in (5, 6)])
    d2 = mesh8.cells_elements([(i, j) for i in (5, 6) for j in (1, 2)])
    return d1, d2


@pytest.fixture(scope="session")
def reference_loads(mesh4, part4, basis4):
    return construct_all(mesh4, part4, 1.0, 2.0, basis=basis4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
