import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from gcltlab.errors import GuardError, ValidationError
from gcltlab.g_limit import (
    GHeatConfig,
    ThetaInterval,
    capacity_interval,
    control_from_spec,
    control_mc_lower_bound,
    g_expect,
    g_function,
    ramp_indicator,
    solve_g_heat,
    terminal,
    tree_g_expect,
)
from gcltlab.payoffs import tent


def pde(phi, theta, **kw):
    return solve_g_heat(GHeatConfig.build(theta, phi, **kw)).value_at_origin


def normal_quad(phi, var):
    """Classical E[phi(sqrt(var) Z)] by adaptive quadrature."""
    s = math.sqrt(var)
    f = lambda z: float(phi(np.array([s * z]))[0]) * stats.norm.pdf(z)
    return integrate.quad(f, -12, 12, points=[-1 / s, 0.0, 1 / s], limit=200)[0]


# --- G ---------------------------------------------------------------------

@pytest.mark.parametrize("a,expected", [(1.0, 2.0), (-1.0, -0.5), (0.0, 0.0)])
def test_g_function_examples(a, expected):
    assert g_function(a, (1.0, 4.0)) == expected


@settings(max_examples=80, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 5), st.floats(0, 2), st.floats(0, 2))
def test_g_function_sublinear(a, b, lam, lo, extra):
    th = (lo, lo + extra)
    assert g_function(a + b, th) <= g_function(a, th) + g_function(b, th) + 1e-12
    assert g_function(lam * a, th) == pytest.approx(lam * g_function(a, th), abs=1e-9)


@pytest.mark.parametrize("lo,hi", [(-0.1, 1.0), (2.0, 1.0), (0.0, math.inf)])
def test_theta_validation(lo, hi):
    with pytest.raises(ValidationError):
        ThetaInterval(lo, hi)


# --- PDE ---------------------------------------------------------------------

@pytest.mark.parametrize("s2", [0.25, 1.0])
def test_pde_classical_square(s2):
    assert pde(lambda x: x**2, (s2, s2)) == pytest.approx(s2, abs=1e-3)


def test_pde_square_picks_top_volatility():
    assert pde(lambda x: x**2, (0.25, 1.0)) == pytest.approx(1.0, abs=1e-2)
    assert tree_g_expect(lambda x: x**2, (0.25, 1.0)) == pytest.approx(1.0, abs=1e-2)


def test_pde_one_minus_abs_closed_form():
    expected = 1.0 - 0.5 * math.sqrt(2.0 / math.pi)
    assert pde(lambda x: 1.0 - np.abs(x), (0.25, 0.25)) == pytest.approx(expected, abs=1e-3)


def test_cfl_guard():
    with pytest.raises(GuardError):
        GHeatConfig(ThetaInterval(1.0, 4.0), 9.0, 0.01, 10, tent)


def test_radius_guard():
    with pytest.raises(GuardError):
        GHeatConfig.build((1.0, 4.0), tent, x_radius=1.0)


def test_non_finite_terminal():
    with pytest.raises(GuardError), np.errstate(divide="ignore"):
        pde(lambda x: 1.0 / (x - x), (0.25, 0.25))


def test_solution_within_terminal_range():
    sol = solve_g_heat(GHeatConfig.build((0.0, 1.0), lambda x: np.cos(3 * x)))
    assert -1.0 <= sol.value_at_origin <= 1.0
    assert np.all(np.abs(sol.grid.values) <= 1.0 + 1e-12)


@pytest.mark.parametrize("c", [-2.0, 0.0, 3.5])
def test_constants_preserved(c):
    phi = lambda x: np.full_like(x, c)
    assert pde(phi, (0.1, 2.0)) == c
    assert tree_g_expect(phi, (0.1, 2.0), n=64) == c


payoff_params = st.tuples(st.floats(-2, 2), st.floats(0.5, 4), st.floats(-1, 1))


def _bump(params):
    a, k, b = params
    return lambda x: a * np.cos(k * x) + b * np.minimum(np.abs(x), 1.0)


@settings(max_examples=10, deadline=None)
@given(payoff_params, st.floats(-3, 3), st.floats(0.1, 4))
def test_translation_and_homogeneity(params, c, lam):
    phi = _bump(params)
    th = (0.1, 0.5)
    base = pde(phi, th, h=0.02)
    assert pde(lambda x: phi(x) + c, th, h=0.02) == pytest.approx(base + c, abs=1e-9)
    assert pde(lambda x: lam * phi(x), th, h=0.02) == pytest.approx(lam * base, abs=1e-9)


@settings(max_examples=10, deadline=None)
@given(payoff_params, st.floats(0.0, 1.0))
def test_comparison_principle(params, bump):
    phi = _bump(params)
    psi = lambda x: phi(x) + bump * np.exp(-x * x)
    assert pde(phi, (0.1, 0.5), h=0.02) <= pde(psi, (0.1, 0.5), h=0.02) + 1e-12


@pytest.mark.parametrize("phi", [np.sin, np.arctan, lambda x: np.cos(2 * x)], ids=["sin", "arctan", "cos2x"])
@pytest.mark.parametrize("s2", [0.25, 1.0])
def test_degenerate_theta_matches_gauss_hermite(phi, s2):
    z, w = np.polynomial.hermite_e.hermegauss(80)
    ref = float(w @ phi(math.sqrt(s2) * z)) / math.sqrt(2 * math.pi)
    assert pde(phi, (s2, s2)) == pytest.approx(ref, abs=1e-3)


def test_sublinear_in_payoff():
    f, g = np.sin, lambda x: np.cos(2 * x)
    th = (0.1, 1.0)
    assert pde(lambda x: f(x) + g(x), th) <= pde(f, th) + pde(g, th) + 1e-12


def test_upper_dominates_classical_family():
    th = (0.1, 1.0)
    phi = lambda x: np.cos(2 * x) + 0.3 * np.abs(x)
    up = pde(phi, th)
    for v in (0.1, 0.4, 1.0):
        assert normal_quad(phi, v) <= up + 2e-3


# --- tree oracle ------------------------------------------------------------

def test_tree_martingale_mean():
    assert tree_g_expect(lambda x: x, (0.5, 0.5), n=256) == pytest.approx(0.0, abs=1e-12)


def test_tree_classical_variance():
    assert tree_g_expect(lambda x: x**2, (0.25, 0.25), n=512) == pytest.approx(0.25, abs=5e-3)


def test_tree_matches_pde_on_tent():
    assert abs(tree_g_expect(tent, (0.0, 0.25)) - pde(tent, (0.0, 0.25))) <= 0.01


def test_tree_radius_guard():
    with pytest.raises(GuardError):
        tree_g_expect(tent, (1.0, 4.0), x_radius=2.0)


def test_tree_rejects_zero_steps():
    with pytest.raises(ValidationError):
        tree_g_expect(tent, (1.0, 4.0), n=0)


@pytest.mark.parametrize("odd", [np.sin, lambda x: np.clip(x, -1, 1) ** 3], ids=["sin", "clipped_cube"])
def test_tree_odd_payoff_symmetry(odd):
    th = (0.25, 1.0)
    val = tree_g_expect(odd, th, n=256)
    mirrored = tree_g_expect(lambda x: odd(-x), th, n=256)
    assert val >= -1e-12
    assert val == pytest.approx(mirrored, abs=1e-12)


# --- dispatch ---------------------------------------------------------------

def test_g_expect_both_reports_gap():
    val, gap = g_expect(tent, (0.0, 0.25), method="both")
    assert 0.0 <= gap <= 0.01
    assert val == pde(tent, (0.0, 0.25))


def test_g_expect_both_guard_on_tiny_tolerance():
    with pytest.raises(GuardError):
        g_expect(np.cos, (0.25, 1.0), method="both", tol=1e-12, tree={"n": 16})


def test_g_expect_unknown_method():
    with pytest.raises(ValidationError):
        g_expect(tent, (0.0, 0.25), method="mc")


# --- capacities -------------------------------------------------------------

def test_ramp_indicator_shapes():
    g = ramp_indicator(0.0, 1.0, 0.1, 0.0)
    f = ramp_indicator(0.0, 1.0, 0.0, 0.1)
    x = np.array([-0.05, 0.0, 0.05, 0.5, 1.05])
    np.testing.assert_allclose(g(x), [0.0, 0.0, 0.5, 1.0, 0.0])
    np.testing.assert_allclose(f(x), [0.5, 1.0, 1.0, 1.0, 0.5])


def test_capacity_whole_line():
    br = capacity_interval(-math.inf, math.inf, (0.1, 3.0), 0.5)
    assert (br.lower, br.upper) == (1.0, 1.0)


def test_capacity_half_line():
    assert 0.5 in capacity_interval(0.0, math.inf, (0.25, 0.25), 0.01)


def test_capacity_classical_interval():
    br = capacity_interval(-1.0, 1.0, (0.25, 0.25), 0.01)
    assert stats.norm.cdf(2) - stats.norm.cdf(-2) in br
    assert 0.0 <= br.lower <= br.upper <= 1.0


def test_capacity_width_shrinks():
    widths = [capacity_interval(-1.0, 1.0, (0.1, 0.5), e).width for e in (0.2, 0.1, 0.05)]
    assert widths[0] > widths[1] > widths[2] > 0


@pytest.mark.parametrize("a,b,eps", [(0.0, 1.0, 0.5), (0.0, 1.0, 0.0), (1.0, 0.0, 0.1)])
def test_capacity_bad_epsilon(a, b, eps):
    with pytest.raises(ValidationError):
        capacity_interval(a, b, (0.25, 0.25), eps)


# --- control Monte Carlo ----------------------------------------------------

def test_mc_martingale_mean():
    th = (0.25, 1.0)
    est, se = control_mc_lower_bound(terminal(lambda x: x), th, control_from_spec("high", th),
                                     paths=20_000, seed=3)
    assert abs(est) <= 3 * se


def test_mc_top_volatility_square():
    th = (0.25, 1.0)
    est, se = control_mc_lower_bound(terminal(lambda x: x**2), th, control_from_spec("high", th),
                                     paths=20_000, seed=4)
    assert abs(est - 1.0) <= 3 * se


def test_mc_is_lower_bound():
    th = (0.0, 0.25)
    ref = pde(tent, th)
    for spec in ("high", "low", "switch:0.3", "const:0.3"):
        est, se = control_mc_lower_bound(terminal(tent), th, control_from_spec(spec, th),
                                         paths=20_000, seed=5)
        assert est <= ref + 3 * se


def test_mc_deterministic_across_thread_counts(monkeypatch):
    th = (0.25, 1.0)
    ctrl = control_from_spec("switch:0.5", th)
    runs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("GCLTLAB_THREADS", threads)
        runs.append(control_mc_lower_bound(terminal(tent), th, ctrl, paths=20_000, seed=11, steps=16))
    assert runs[0] == runs[1]


def test_mc_rejects_inadmissible_control():
    with pytest.raises(ValidationError):
        control_mc_lower_bound(terminal(tent), (0.25, 1.0), lambda t, y: 2.0, paths=200)


def test_mc_rejects_few_paths():
    with pytest.raises(ValidationError):
        control_mc_lower_bound(terminal(tent), (0.25, 1.0), lambda t, y: 1.0, paths=10)


@pytest.mark.parametrize("spec", ["const:5", "wobble", "switch:x"])
def test_control_spec_errors(spec):
    with pytest.raises(ValidationError):
        control_from_spec(spec, (0.25, 1.0))
