import shutil

import pytest

from helpers import MINICITY
from tncspatial.geo import Adjacency
from tncspatial.weights import build_weights


@pytest.fixture
def path3():
    return build_weights(Adjacency.from_pairs(3, [(0, 1), (1, 2)]))


@pytest.fixture
def minicity(tmp_path):
    """Writable copy of the bundled fixture, without prior outputs."""
    dst = tmp_path / "minicity"
    shutil.copytree(MINICITY, dst, ignore=shutil.ignore_patterns("out"))
    return dst



_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    rep = outcome.get_result()
    number, title = mark.args
    prev = _CRITERIA.get(number, ("PASS", title, 0.0))
    if rep.when == "setup" and rep.failed or rep.when == "call":
        status = "PASS" if rep.passed and prev[0] == "PASS" else "FAIL"
        _CRITERIA[number] = (status, title, prev[2] + rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, seconds = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}  ({seconds:.1f} s)")
