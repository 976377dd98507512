import numpy as np
import pytest

from spatialcrt.geometry import Metric, PointSet, generate_uniform_locations


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_points():
    return generate_uniform_locations(120, seed=7)


def points_from(coords, metric=Metric.CHEBYSHEV):
    return PointSet(np.asarray(coords, dtype=float), metric)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    status = "PASS" if report.passed else "FAIL"
    line = f"{status}  {props['criterion']}  [{props.get('measured', '')}]"
    pytest_runtest_logreport.lines.append(line)


pytest_runtest_logreport.lines = []


def pytest_terminal_summary(terminalreporter):
    lines = pytest_runtest_logreport.lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
