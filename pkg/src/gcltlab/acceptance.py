"""Exit criteria for the toolkit, runnable from pytest and from ``gcltlab selftest``.

Each ``criterion_*`` function returns a :class:`CriterionResult`; tolerances and
runtime budgets are fixed here.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.stats import norm

from . import payoffs
from .g_limit import (
    capacity_interval,
    control_mc_lower_bound,
    g_expect,
    ramp_indicator,
    solve_g_heat,
    GHeatConfig,
    terminal,
    tree_g_expect,
)
from .kernel_dp import (
    GridSpec,
    HorizonModel,
    KernelStrategy,
    MixtureGrid,
    brute_force_sup,
    centered_sum_sup,
    conditional_range_check,
    conditional_variance_check,
    sup_expect_history,
    sup_expect_sum,
    volatility_matching_strategy,
)
from .limit_harness import (
    NORMAL_ONE_MINUS_ABS,
    d_theta,
    example_5_1_set,
    example_5_2_set,
    example_5_3,
)
from .measure_core import DiscreteMeasure, MeasureSet, variance_bounds, variance_oracle

SEED = 20240601


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    runtime_s: float
    budget_s: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] {self.number:>2}. {self.name}: {self.detail} "
                f"({self.runtime_s:.1f}s / {self.budget_s:.0f}s)")


def _run(number: int, name: str, budget_s: float, body: Callable[[], tuple[bool, str]]):
    start = time.perf_counter()
    ok, detail = body()
    elapsed = time.perf_counter() - start
    if elapsed >= budget_s:
        ok = False
        detail += f"; over the {budget_s:.0f}s budget"
    return CriterionResult(number, name, bool(ok), detail, elapsed, budget_s)


def random_measure_set(rng: np.random.Generator, max_extremes: int = 4, max_support: int = 5,
                       span: float = 2.0) -> MeasureSet:
    extremes = []
    for _ in range(int(rng.integers(1, max_extremes + 1))):
        s = int(rng.integers(1, max_support + 1))
        extremes.append(DiscreteMeasure(tuple(rng.uniform(-span, span, s)),
                                        tuple(rng.dirichlet(np.ones(s)))))
    return MeasureSet(tuple(extremes))


def random_small_model(rng: np.random.Generator, max_n: int = 3) -> HorizonModel:
    """At most 3 extremes over a shared pool of at most 3 points."""
    pool = rng.uniform(-2.0, 2.0, int(rng.integers(1, 4)))
    extremes = []
    for _ in range(int(rng.integers(1, 4))):
        k = int(rng.integers(1, pool.size + 1))
        pts = rng.choice(pool, size=k, replace=False)
        extremes.append(DiscreteMeasure(tuple(pts), tuple(rng.dirichlet(np.ones(k)))))
    return HorizonModel(MeasureSet(tuple(extremes)), int(rng.integers(1, max_n + 1)))


def random_path_payoff(rng: np.random.Generator, n: int):
    a = rng.normal(size=n)
    c = rng.normal(size=n)
    b, d = rng.normal(size=2)

    def phi(paths):
        return paths @ a + b * np.sin(paths @ c) + d * np.max(paths, axis=1) ** 2

    return phi


def random_strategy(rng: np.random.Generator, k: int) -> KernelStrategy:
    """History-dependent strategy with memoised random mixtures (some at vertices)."""
    table: dict = {}
    style = int(rng.integers(0, 3))

    def choose(step, history):
        key = (step, history)
        if key not in table:
            if style == 0:
                w = np.zeros(k)
                w[int(rng.integers(0, k))] = 1.0
            elif style == 1:
                w = rng.dirichlet(np.ones(k))
            else:
                w = rng.dirichlet(0.2 * np.ones(k))
            table[key] = w
        return table[key]

    return KernelStrategy(choose, k)


def criterion_1_variance_duality() -> CriterionResult:
    def body():
        rng = np.random.default_rng(SEED + 1)
        worst_gap, worst_low, bad = 0.0, 0.0, 0
        for _ in range(200):
            S = random_measure_set(rng)
            vb = variance_bounds(S)
            v_est, _ = variance_oracle(S, 0.01)
            vertex_min = min(float(m.p @ (m.x - m.p @ m.x) ** 2) for m in S.extremes)
            gap = vb.upper - v_est
            low_err = abs(vb.lower - vertex_min)
            worst_gap = max(worst_gap, gap)
            worst_low = max(worst_low, low_err)
            if not (vb.upper >= v_est - 1e-9 and gap <= 5e-3 and low_err <= 1e-12):
                bad += 1
        return bad == 0, f"200 sets, max gap {worst_gap:.2e}, max lower err {worst_low:.1e}, failures {bad}"
    return _run(1, "variance duality", 60, body)


def criterion_2_dp_oracle() -> CriterionResult:
    def body():
        rng = np.random.default_rng(SEED + 2)
        worst = 0.0
        for _ in range(100):
            model = random_small_model(rng)
            phi = random_path_payoff(rng, model.horizon)
            worst = max(worst, abs(sup_expect_history(model, phi) - brute_force_sup(model, phi)))
        return worst <= 1e-12, f"100 models, max |DP - brute force| = {worst:.1e}"
    return _run(2, "DP vs brute-force oracle", 30, body)


def criterion_3_sandwiches() -> CriterionResult:
    def body():
        rng = np.random.default_rng(SEED + 3)
        range_viol = var_viol = nodes = 0
        for i in range(1000):
            base = random_measure_set(rng, max_extremes=3, max_support=3)
            model = HorizonModel(base, int(rng.integers(1, 4)))
            if i % 10 == 0:
                vb = variance_bounds(base)
                lo, hi = vb.lower, vb.upper
                strat = volatility_matching_strategy(
                    model, lambda step, hist, lo=lo, hi=hi: lo + (hi - lo) * (0.5 + 0.5 * math.sin(step + sum(hist))))
            else:
                strat = random_strategy(rng, len(base))
            a, b = rng.normal(size=2)
            phi = lambda x, a=a, b=b: np.sin(a * x) + b * x * x
            r1 = conditional_range_check(model, strat, phi)
            r2 = conditional_variance_check(model, strat)
            range_viol += len(r1.violations)
            var_viol += len(r2.violations)
            nodes += r1.nodes_checked
        ok = range_viol == 0 and var_viol == 0
        return ok, f"1000 strategies, {nodes} nodes, violations range={range_viol} variance={var_viol}"
    return _run(3, "conditional mean/variance sandwiches", 60, body)


def criterion_4_lln() -> CriterionResult:
    def body():
        base = example_5_2_set()
        phi = lambda s: d_theta(s, 0.0, 1.0)
        v10 = sup_expect_sum(HorizonModel(base, 10), phi, 1.0 / 10)
        v200 = sup_expect_sum(HorizonModel(base, 200), phi, 1.0 / 200)
        ok = v200 <= 0.05 and v200 < v10
        return ok, f"value(n=10)={v10:.3g}, value(n=200)={v200:.3g}; requires value(200) <= 0.05 and value(200) < value(10)"
    return _run(4, "LLN on the two-point hull", 60, body)


def normal_expectation(phi, variance: float, breakpoints=(-1.0, 0.0, 1.0)) -> float:
    """Adaptive Gauss-Kronrod quadrature of ``E[phi(sqrt(variance) Z)]``."""
    sd = math.sqrt(variance)
    f = lambda x: float(np.asarray(phi(np.array([x])))[0]) * norm.pdf(x, scale=sd)
    lim = 12.0 * sd
    pts = [p for p in breakpoints if -lim < p < lim]
    val, _ = integrate.quad(f, -lim, lim, points=pts or None, limit=200, epsabs=1e-12)
    return val


def criterion_5_clt_classical() -> CriterionResult:
    def body():
        dp = centered_sum_sup(HorizonModel(example_5_1_set(), 512), payoffs.tent,
                              MixtureGrid(1), GridSpec(0.01))
        ref = normal_expectation(payoffs.tent, 0.25)
        err = abs(dp - ref)
        return err <= 0.01, f"DP={dp:.5f}, N(0,1/4) quadrature={ref:.5f}, |diff|={err:.2e} <= 0.01"
    return _run(5, "CLT classical reduction (fair coin)", 120, body)


def criterion_6_clt_mean_uncertainty() -> CriterionResult:
    def body():
        model = HorizonModel(example_5_2_set(), 512)
        vals = {M: centered_sum_sup(model, payoffs.tent, MixtureGrid(M), GridSpec(0.01))
                for M in (10, 50, 100)}
        limit = g_expect(payoffs.tent, (0.0, 0.25), method="pde")
        err = abs(vals[100] - limit)
        mono = vals[10] <= vals[50] <= vals[100]
        return err <= 0.02 and mono, (
            f"DP(M=10,50,100)=({vals[10]:.5f}, {vals[50]:.5f}, {vals[100]:.5f}), "
            f"G-heat={limit:.5f}, |diff|={err:.2e} <= 0.02, nondecreasing={mono}")
    return _run(6, "CLT with mean uncertainty (two-point hull)", 600, body)


CROSS_BATTERY = {
    "x^2": payoffs.square,
    "1-min(|x|,1)": payoffs.tent,
    "ramp[-0.5,0.5]": ramp_indicator(-0.5, 0.5, 0.1, 0.0),
    "ramp[0.5,inf)": ramp_indicator(0.5, math.inf, 0.0, 0.1),
}
CROSS_THETAS = ((0.25, 0.25), (0.0, 0.25), (1.0, 4.0))


def criterion_7_solver_cross_oracle() -> CriterionResult:
    def body():
        worst, where = 0.0, ""
        for theta in CROSS_THETAS:
            for name, phi in CROSS_BATTERY.items():
                pde = g_expect(phi, theta, method="pde")
                tree = tree_g_expect(phi, theta)
                if abs(pde - tree) > worst:
                    worst, where = abs(pde - tree), f"{name} on {list(theta)}"
        return worst <= 0.01, f"max |PDE - tree| = {worst:.2e} ({where}) <= 0.01"
    return _run(7, "G-heat PDE vs tree oracle", 120, body)


def criterion_8_capacity() -> CriterionResult:
    def body():
        ref = norm.cdf(2.0) - norm.cdf(-2.0)
        brackets = {e: capacity_interval(-1.0, 1.0, (0.25, 0.25), e) for e in (0.1, 0.05, 0.01)}
        b = brackets[0.01]
        contains = ref in b
        narrow = b.width <= 0.02
        eps = sorted(brackets, reverse=True)
        lower_ok = all(brackets[e1].lower <= brackets[e2].lower for e1, e2 in zip(eps, eps[1:]))
        upper_ok = all(brackets[e1].upper >= brackets[e2].upper for e1, e2 in zip(eps, eps[1:]))
        return contains and narrow and lower_ok and upper_ok, (
            f"eps=0.01 bracket [{b.lower:.5f}, {b.upper:.5f}] vs {ref:.5f}, width {b.width:.4f}, "
            f"monotone in eps: lower={lower_ok} upper={upper_ok}")
    return _run(8, "capacity squeeze", 60, body)


def criterion_9_example_5_3() -> CriterionResult:
    def body():
        rep = example_5_3([10, 100, 1000], [16])
        v = rep.values(16)
        ok = v[1000] >= v[100] >= v[10] and v[1000] >= 0.9 and v[1000] > NORMAL_ONE_MINUS_ABS
        return ok, (f"n=16: K=10 {v[10]:.4f}, K=100 {v[100]:.4f}, K=1000 {v[1000]:.4f} "
                    f"vs N(0,1) value {NORMAL_ONE_MINUS_ABS:.4f}")
    return _run(9, "heavy-tail CLT failure", 120, body)


def random_control(rng: np.random.Generator, sig_lo: float, sig_hi: float):
    a = rng.uniform(sig_lo, sig_hi)
    b, c = rng.uniform(-1.0, 1.0, 2)
    f = rng.uniform(0.5, 4.0)

    def control(t, history):
        raw = a + b * math.sin(2 * math.pi * f * t) + c * np.tanh(history[:, -1])
        return np.clip(raw, sig_lo, sig_hi)

    return control


def criterion_10_mc_lower_bound() -> CriterionResult:
    def body():
        theta = (0.25, 1.0)
        pde = solve_g_heat(GHeatConfig.build(theta, payoffs.square)).value_at_origin
        rng = np.random.default_rng(SEED + 10)
        margins = []
        for i in range(5):
            ctl = random_control(rng, 0.5, 1.0)
            est, se = control_mc_lower_bound(terminal(payoffs.square), theta, ctl,
                                             paths=100_000, seed=SEED + i)
            margins.append(pde - (est - 3 * se))
        return min(margins) >= 0, f"G-heat value {pde:.5f}; min(value - (est - 3se)) = {min(margins):.4f}"
    return _run(10, "control Monte Carlo lower bound", 120, body)


CRITERIA = (
    criterion_1_variance_duality,
    criterion_2_dp_oracle,
    criterion_3_sandwiches,
    criterion_4_lln,
    criterion_5_clt_classical,
    criterion_6_clt_mean_uncertainty,
    criterion_7_solver_cross_oracle,
    criterion_8_capacity,
    criterion_9_example_5_3,
    criterion_10_mc_lower_bound,
)


def run_all(echo=print) -> list[CriterionResult]:
    results = []
    for crit in CRITERIA:
        res = crit()
        echo(res.line())
        results.append(res)
    return results
