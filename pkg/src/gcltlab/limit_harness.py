"""Convergence experiments: LLN, CLT and the three worked examples."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from ._parallel import ordered_map
from .errors import GuardError, ValidationError
from .g_limit import g_expect
from .kernel_dp import GridSpec, HorizonModel, MixtureGrid, centered_sum_sup, sup_expect_sum
from .measure_core import (
    DiscreteMeasure,
    MeanInterval,
    MeasureSet,
    bernoulli,
    mean_interval,
    point_mass,
    variance_bounds,
    variance_oracle,
)
from .payoffs import tent

CSV_COLUMNS = ("experiment", "n", "K", "M", "h", "dp_value", "limit_value", "abs_error", "runtime_ms")

LLN_GRID_LIMIT = 10**7


@dataclass
class ConvergenceRow:
    experiment: str
    n: int
    dp_value: float
    limit_value: float
    K: int | None = None
    M: int | None = None
    h: float | None = None
    runtime_ms: float | None = None
    abs_error: float = field(init=False)

    def __post_init__(self):
        self.abs_error = abs(self.dp_value - self.limit_value)

    def as_dict(self) -> dict:
        return {k: asdict(self)[k] for k in CSV_COLUMNS}


def d_theta(x, theta_lo: float, theta_hi: float):
    """Distance from ``x`` to the interval ``[theta_lo, theta_hi]``."""
    if theta_lo > theta_hi:
        raise ValidationError(f"reversed interval [{theta_lo}, {theta_hi}]")
    x = np.asarray(x, dtype=float)
    out = np.maximum(np.maximum(theta_lo - x, x - theta_hi), 0.0)
    return float(out) if out.ndim == 0 else out


def lln_limit(phi: Callable, interval: MeanInterval, lipschitz_bound: float,
              eps: float = 1e-6) -> float:
    """``max phi`` over the mean interval, to within ``eps``.

    Grid spacing ``eps / lipschitz_bound`` guarantees the accuracy; a bounded
    scalar search around the best node polishes the result.
    """
    if not isinstance(interval, MeanInterval):
        interval = MeanInterval(*interval)
    lo, hi = interval.lower, interval.upper
    if lo == hi:
        return float(np.asarray(phi(np.array([lo])))[0])
    if lipschitz_bound <= 0:
        raise ValidationError("Lipschitz bound must be positive")
    count = math.ceil((hi - lo) * lipschitz_bound / eps) + 1
    if count > LLN_GRID_LIMIT:
        raise GuardError(f"{count} grid points needed for eps={eps}")
    grid = np.linspace(lo, hi, max(count, 2))
    vals = np.asarray(phi(grid), dtype=float)
    j = int(np.argmax(vals))
    best = float(vals[j])
    a, b = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    if b > a:
        res = minimize_scalar(lambda m: -float(np.asarray(phi(np.array([m])))[0]),
                              bounds=(a, b), method="bounded", options={"xatol": eps})
        best = max(best, -float(res.fun))
    return best


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, 1e3 * (time.perf_counter() - start)


def lln_converge(base: MeasureSet, phi: Callable, n_list: Sequence[int],
                 lipschitz_bound: float = 1.0, experiment: str = "lln") -> list[ConvergenceRow]:
    limit = lln_limit(phi, mean_interval(base), lipschitz_bound)

    def row(n):
        dp, ms = _timed(lambda: sup_expect_sum(HorizonModel(base, n), phi, 1.0 / n))
        return ConvergenceRow(experiment, n, dp, limit, runtime_ms=ms)

    return ordered_map(row, sorted(n_list))


def lln_vertex_floor(base: MeasureSet, phi: Callable, n: int) -> float:
    """Best classical value of ``phi(S_n / n)`` over i.i.d. laws of single extremes."""
    return max(sup_expect_sum(HorizonModel(MeasureSet((m,)), n), phi, 1.0 / n)
               for m in base.extremes)


def clt_converge(base: MeasureSet, phi: Callable, n_list: Sequence[int], M: int = 10,
                 h: float = 0.01, tol: float = 0.01, experiment: str = "clt"
                 ) -> list[ConvergenceRow]:
    """Pair the centred-sum DP with the G-normal value for each horizon."""
    vb = variance_bounds(base)
    limit, _ = g_expect(phi, (vb.lower, vb.upper), method="both", tol=tol)

    def row(n):
        dp, ms = _timed(lambda: centered_sum_sup(HorizonModel(base, n), phi, MixtureGrid(M), GridSpec(h)))
        return ConvergenceRow(experiment, n, dp, limit, M=M, h=h, runtime_ms=ms)

    return ordered_map(row, sorted(n_list))


def example_5_1_set() -> MeasureSet:
    """Fair coin on {0, 1}: no mean or variance uncertainty."""
    return MeasureSet((bernoulli(0.5),))


def example_5_2_set() -> MeasureSet:
    """All laws on {0, 1}: the hull of the two point masses."""
    return MeasureSet((point_mass(0.0), point_mass(1.0)))


def heavy_tail_measure(k: int) -> DiscreteMeasure:
    """Mass ``1 - 1/k^2`` at 0 and ``1/(2k^2)`` at each of ``+-k``."""
    q = 1.0 / (2.0 * k * k)
    return DiscreteMeasure((-float(k), 0.0, float(k)), (q, 1.0 - 2.0 * q, q))


def example_5_3_set(K: int) -> MeasureSet:
    if K < 1:
        raise ValidationError("truncation K must be >= 1")
    return MeasureSet(tuple(heavy_tail_measure(k) for k in range(1, K + 1)))


NORMAL_ONE_MINUS_ABS = 1.0 - math.sqrt(2.0 / math.pi)


@dataclass
class Example53Report:
    rows: list[ConvergenceRow]
    classical_value: float

    def values(self, n: int) -> dict[int, float]:
        return {r.K: r.dp_value for r in self.rows if r.n == n}

    def monotone_in_K(self) -> bool:
        ok = True
        for n in {r.n for r in self.rows}:
            vals = [v for _, v in sorted(self.values(n).items())]
            ok &= all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
        return ok


def example_5_3(K: int | Sequence[int], n_list: Sequence[int],
                phi: Callable = lambda x: 1.0 - np.abs(x)) -> Example53Report:
    """Uncentred ``sup E[phi(S_n / sqrt(n))]`` for the truncated heavy-tail family.

    The family has zero upper and lower mean, so no centering is needed.  Values
    stay near ``phi(0) = 1`` and exceed the N(0, 1) value ``1 - sqrt(2/pi)``.
    """
    Ks = [K] if isinstance(K, int) else list(K)
    jobs = [(k, n) for k in sorted(Ks) for n in sorted(n_list)]

    def row(job):
        k, n = job
        dp, ms = _timed(lambda: sup_expect_sum(HorizonModel(example_5_3_set(k), n), phi,
                                               1.0 / math.sqrt(n)))
        return ConvergenceRow("example53", n, dp, NORMAL_ONE_MINUS_ABS, K=k, runtime_ms=ms)

    rows = ordered_map(row, jobs)
    rows.sort(key=lambda r: (r.n, r.K))
    return Example53Report(rows, NORMAL_ONE_MINUS_ABS)


# values stated for the worked examples: (upper variance, lower variance)
EXAMPLE_VARIANCES = {"example51": (0.25, 0.25), "example52": (0.25, 0.0)}

NAMED_SETS = {"example51": example_5_1_set, "example52": example_5_2_set}


def named_set(name: str) -> MeasureSet:
    """``example51``, ``example52`` or ``example53:<K>``."""
    if name in NAMED_SETS:
        return NAMED_SETS[name]()
    if name.startswith("example53:"):
        return example_5_3_set(int(name.split(":", 1)[1]))
    raise ValidationError(f"unknown measure set {name!r}")


def variance_rows(base: MeasureSet, experiment: str, grid_step: float = 0.01) -> list[dict]:
    """Mean interval, upper/lower variance and their brute-force grid values."""
    iv = mean_interval(base)
    vb = variance_bounds(base)
    v_hi, v_lo = variance_oracle(base, grid_step)
    return [
        {"experiment": experiment, "quantity": "mean_lower", "value": iv.lower},
        {"experiment": experiment, "quantity": "mean_upper", "value": iv.upper},
        {"experiment": experiment, "quantity": "variance_upper", "value": vb.upper},
        {"experiment": experiment, "quantity": "variance_lower", "value": vb.lower},
        {"experiment": experiment, "quantity": "argmin_mean_upper", "value": vb.argmin_mean_upper},
        {"experiment": experiment, "quantity": "oracle_variance_upper", "value": v_hi},
        {"experiment": experiment, "quantity": "oracle_variance_lower", "value": v_lo},
    ]


def example_rows(name: str, n_list: Sequence[int], M: int, h: float) -> list[ConvergenceRow]:
    """Stated variances plus the CLT table for the fair-coin or two-point-hull set."""
    base = named_set(name)
    vb = variance_bounds(base)
    ref_hi, ref_lo = EXAMPLE_VARIANCES[name]
    rows = [ConvergenceRow(f"{name}/variance_upper", 1, vb.upper, ref_hi),
            ConvergenceRow(f"{name}/variance_lower", 1, vb.lower, ref_lo)]
    rows += clt_converge(base, tent, n_list, M=M, h=h, experiment=f"{name}/clt")
    return rows
