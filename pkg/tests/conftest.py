import numpy as np
import pytest

from lossforge.graph import LossGraph, Node
from lossforge.integrity import has_cycle


def make_graph(hidden, root, sign=1):
    """Build a graph from ``(op, arg, ...)`` tuples; missing hidden slots become ``neg(y)``."""
    nodes = [Node(op, tuple(args)) for op, *args in hidden]
    nodes += [Node("neg", ("y",))] * (4 - len(nodes))
    return LossGraph(tuple(nodes), Node(root[0], tuple(root[1:])), sign)


def acyclic_graphs(rng, count):
    from lossforge.evolve import random_graph
    out = []
    while len(out) < count:
        g = random_graph(rng)
        if not has_cycle(g):
            out.append(g)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting: one PASS/FAIL line per criterion ----------------------

_CRITERIA: dict[int, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, [title, True, report.duration])
    entry[2] = report.duration if report.when == "call" else entry[2]
    if report.failed or (report.when == "call" and report.skipped):
        entry[1] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, seconds = _CRITERIA[number]
        terminalreporter.write_line(
            f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {title} ({seconds:.1f} s)")
