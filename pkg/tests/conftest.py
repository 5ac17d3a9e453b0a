import os

# finite-value guards on every recorded tensor
os.environ.setdefault("GAA_DEBUG", "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from gaa.graph import build_graph, load_supermodules  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def pair_graph():
    return build_graph([("a", "b")])


@pytest.fixture
def star_graph():
    return build_graph([("c", f"l{i}") for i in range(1, 5)])


@pytest.fixture
def toy6():
    """6-node graph with 2 overlapping modules, used for end-to-end gradient checks."""
    g = build_graph([("a", "b"), ("b", "c"), ("c", "d"), ("d", "e"), ("e", "f"), ("f", "a"), ("a", "d")])
    mods = load_supermodules("m1\tx\ta\tb\tc\nm2\tx\tc\td\te\tf\n", g)
    return g, mods


_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1][len("test_criterion_"):]
        number, _, title = name.partition("_")
        _CRITERIA[number] = ("PASS" if report.outcome == "passed" else "FAIL", title.replace("_", " "))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA, key=int):
        status, title = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {int(number):2d}: {status}  {title}")
