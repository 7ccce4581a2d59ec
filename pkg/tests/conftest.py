import numpy as np
import pytest

from epihom.geometry import CellGeometry, build_unit_cell_mesh
from epihom.membrane import ModelParams

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record ``(number, name, passed, detail)`` and assert the outcome."""

    def report(number, name, passed, detail=""):
        _CRITERIA.append((number, name, bool(passed), detail))
        assert passed, f"criterion {number} ({name}) failed: {detail}"

    return report


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_CRITERIA):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}  {name}: {detail}")


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def circle():
    return CellGeometry.circle(5e-5)


@pytest.fixture(scope="session")
def coarse_mesh(circle):
    return build_unit_cell_mesh(circle, 1e-5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
