import numpy as np
import pytest
from hypothesis import strategies as st

from gcltlab.measure_core import DiscreteMeasure, MeasureSet, point_mass


@pytest.fixture
def coin_hull():
    """Hull of the two point masses on {0, 1}."""
    return MeasureSet((point_mass(0.0), point_mass(1.0)))


@st.composite
def measures(draw, max_support=4, span=2.0):
    s = draw(st.integers(1, max_support))
    pts = draw(st.lists(st.floats(-span, span, allow_nan=False), min_size=s, max_size=s))
    raw = draw(st.lists(st.floats(0.05, 1.0), min_size=s, max_size=s))
    w = np.array(raw) / np.sum(raw)
    return DiscreteMeasure(tuple(pts), tuple(w))


@st.composite
def measure_sets(draw, max_extremes=4, max_support=4):
    k = draw(st.integers(1, max_extremes))
    return MeasureSet(tuple(draw(measures(max_support)) for _ in range(k)))


_acceptance_lines: list[str] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance_lines.extend(l for l in report.capstdout.splitlines() if l.startswith("["))


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
