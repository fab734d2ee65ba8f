import numpy as np
import pytest

from pathvisc import hamiltonians
from pathvisc.rough_path import piecewise_linear_lift


def line_path(T=1.0, samples=101, slope=1.0):
    t = np.linspace(0.0, T, samples)
    return piecewise_linear_lift(t, slope * t)


@pytest.fixture
def half_p2():
    return hamiltonians.builtin("x_independent")


@pytest.fixture
def unit_line():
    return line_path()


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    _, ok, names = _CRITERIA.get(number, (title, True, []))
    if rep.when == "call":
        names.append(item.name)
    _CRITERIA[number] = (title, ok and rep.passed, names)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, names = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title} ({len(names)} tests)")
