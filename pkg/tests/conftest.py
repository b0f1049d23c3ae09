import numpy as np
import pytest

from recirc.mesh import Interval, PumpSpec, generate_rect_mesh
from recirc.scenarios import LAKE_PUMPS, coarse_scenario, tiny_scenario


@pytest.fixture(scope="session")
def lake_mesh():
    return generate_rect_mesh(20.0, 16.0, 20, 16, pumps=LAKE_PUMPS, control_strip_height=3.0)


@pytest.fixture(scope="session")
def box_mesh():
    """Small closed box without pumps."""
    return generate_rect_mesh(4.0, 3.0, 8, 6, control_strip_height=1.0)


@pytest.fixture(scope="session")
def one_pump_mesh():
    pumps = (PumpSpec(Interval("left", 2.0, 3.0), Interval("bottom", 1.0, 3.0)),)
    return generate_rect_mesh(8.0, 6.0, 8, 6, pumps=pumps, control_strip_height=1.0)


@pytest.fixture(scope="session")
def coarse():
    return coarse_scenario()


@pytest.fixture(scope="session")
def tiny():
    return tiny_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
