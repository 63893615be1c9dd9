import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import measure_sets
from gcltlab.errors import GuardError, ValidationError
from gcltlab.g_limit import g_expect
from gcltlab.kernel_dp import GridSpec, HorizonModel, centered_strategy_value, centered_sum_sup
from gcltlab.kernel_dp import sup_expect_sum, volatility_matching_strategy
from gcltlab.limit_harness import (
    CSV_COLUMNS,
    NORMAL_ONE_MINUS_ABS,
    ConvergenceRow,
    clt_converge,
    d_theta,
    example_5_1_set,
    example_5_2_set,
    example_5_3,
    example_5_3_set,
    example_rows,
    lln_converge,
    lln_limit,
    lln_vertex_floor,
    named_set,
)
from gcltlab.measure_core import (
    DiscreteMeasure,
    MeanInterval,
    MeasureSet,
    bernoulli,
    mean_interval,
    point_mass,
)
from gcltlab.payoffs import d_unit, tent


@pytest.mark.parametrize("x,expected", [(0.5, 0.5), (1.5, 0.0), (3.0, 1.0)])
def test_d_theta(x, expected):
    assert d_theta(x, 1.0, 2.0) == expected


def test_d_theta_reversed():
    with pytest.raises(ValidationError):
        d_theta(0.0, 2.0, 1.0)


@pytest.mark.parametrize("phi,expected", [
    (lambda m: m, 1.0),
    (lambda m: d_theta(m, 0.0, 1.0), 0.0),
    (lambda m: 1.0 - np.abs(m - 0.5), 1.0),
])
def test_lln_limit_examples(phi, expected):
    assert lln_limit(phi, MeanInterval(0.0, 1.0), 1.0) == pytest.approx(expected, abs=1e-6)


def test_lln_limit_interior_peak_off_grid():
    peak = 1 / math.pi
    val = lln_limit(lambda m: -np.abs(m - peak), MeanInterval(0.0, 1.0), 1.0, eps=1e-3)
    assert val == pytest.approx(0.0, abs=1e-3)


def test_lln_limit_rejects_bad_bound():
    with pytest.raises(ValidationError):
        lln_limit(lambda m: m, MeanInterval(0.0, 1.0), 0.0)


def test_lln_example52_distance():
    rows = lln_converge(example_5_2_set(), d_unit, [200, 10, 50])
    assert [r.n for r in rows] == [10, 50, 200]
    errs = [r.abs_error for r in rows]
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 0.05


@pytest.mark.parametrize("base,expected", [
    (MeasureSet((bernoulli(0.5),)), 0.5),
    (example_5_2_set(), 1.0),
])
def test_lln_identity_rows(base, expected):
    rows = lln_converge(base, lambda s: s, [10, 50, 200])
    assert [r.dp_value for r in rows] == [expected] * 3


def test_sum_dp_guards_unrepresentable_lattice():
    S = MeasureSet((point_mass(1.0), point_mass(3.5e-175)))
    with pytest.raises(GuardError):
        sup_expect_sum(HorizonModel(S, 2), lambda s: s, 0.5)


grid_points = st.integers(-8, 8).map(lambda k: k / 4)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(grid_points, grid_points, st.floats(0.1, 0.9)), min_size=1, max_size=3),
       st.integers(1, 12))
def test_lln_vertex_floor_below_sup(specs, n):
    S = MeasureSet(tuple(DiscreteMeasure((a, b), (w, 1 - w)) for a, b, w in specs))
    phi = lambda s: np.cos(2 * s) + 0.5 * np.abs(s)
    assert sup_expect_sum(HorizonModel(S, n), phi, 1.0 / n) >= lln_vertex_floor(S, phi, n) - 1e-12


@settings(max_examples=25, deadline=None)
@given(measure_sets(max_extremes=3, max_support=3))
def test_lln_limit_at_least_vertex_means(S):
    phi = lambda m: np.sin(3 * m)
    iv = mean_interval(S)
    best_vertex = max(float(phi(np.array([m.mean]))[0]) for m in S.extremes)
    assert lln_limit(phi, iv, 3.0) >= best_vertex - 1e-9


def test_convergence_row_error():
    row = ConvergenceRow("x", 4, 0.3, 0.5, M=2)
    assert row.abs_error == pytest.approx(0.2)
    assert tuple(row.as_dict()) == CSV_COLUMNS


def test_clt_example51_limit_is_classical():
    rows = clt_converge(example_5_1_set(), tent, [32], M=1, h=0.01)
    s = 0.5
    ref = stats.norm.expect(lambda z: 1 - min(abs(s * z), 1.0), lb=-12, ub=12, points=[-2, 0, 2])
    assert rows[0].limit_value == pytest.approx(ref, abs=2e-3)
    assert rows[0].abs_error <= 0.02


def test_clt_example52_limit_uses_interval():
    rows = clt_converge(example_5_2_set(), tent, [32], M=10, h=0.01)
    assert rows[0].limit_value == pytest.approx(g_expect(tent, (0.0, 0.25)), abs=1e-12)


def test_clt_rows_sorted_regardless_of_threads(monkeypatch):
    monkeypatch.setenv("GCLTLAB_THREADS", "3")
    rows = clt_converge(example_5_1_set(), tent, [16, 4, 8], M=1, h=0.02)
    assert [r.n for r in rows] == [4, 8, 16]


def test_clt_lower_bound_via_volatility_matching():
    base = example_5_2_set()
    for n in (2, 5, 8):
        model = HorizonModel(base, n)
        strat = volatility_matching_strategy(model, lambda s, h: 0.25)
        assert centered_sum_sup(model, tent, 10, GridSpec(0.002)) >= \
            centered_strategy_value(model, strat, tent) - 2e-3


def _walk_value(n):
    """E[1 - |S_n| / sqrt(n)] for the simple symmetric random walk."""
    k = np.arange(n + 1)
    s = 2 * k - n
    return float(stats.binom.pmf(k, n, 0.5) @ (1 - np.abs(s) / math.sqrt(n)))


@pytest.mark.parametrize("n", [1, 4, 9, 16])
def test_example53_single_measure_is_random_walk(n):
    rep = example_5_3(1, [n])
    assert rep.values(n)[1] == pytest.approx(_walk_value(n), abs=1e-12)


def test_example53_monotone_in_K():
    rep = example_5_3([1, 3, 10, 30], [4, 9])
    assert rep.monotone_in_K()
    assert rep.classical_value == pytest.approx(0.2021, abs=1e-4)
    assert [r.n for r in rep.rows] == sorted(r.n for r in rep.rows)


def test_example53_rejects_zero_truncation():
    with pytest.raises(ValidationError):
        example_5_3_set(0)


def test_example53_measures_have_unit_variance():
    for m in example_5_3_set(5).extremes:
        assert m.mean == pytest.approx(0.0, abs=1e-15) and m.variance == pytest.approx(1.0, abs=1e-12)


def test_named_sets():
    assert named_set("example52") == example_5_2_set()
    assert len(named_set("example53:7")) == 7
    with pytest.raises(ValidationError):
        named_set("example99")


def test_example_rows_stated_variances():
    rows = example_rows("example52", [16], M=4, h=0.02)
    assert rows[0].dp_value == pytest.approx(0.25, abs=1e-15) and rows[0].abs_error < 1e-15
    assert rows[1].dp_value == 0.0
    assert NORMAL_ONE_MINUS_ABS < rows[-1].dp_value <= 1.0
