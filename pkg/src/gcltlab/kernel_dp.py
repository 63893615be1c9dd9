"""Finite-horizon kernel construction and adversarial dynamic programming.

A :class:`HorizonModel` fixes the per-step uncertainty set and the horizon.
A joint law is picked by a :class:`KernelStrategy`, which maps each step and
realised history to mixture weights over the set's extremes.

Path payoffs are vectorised: ``phi(paths)`` receives an ``(m, n)`` array whose
rows are realised point tuples and returns ``m`` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Callable, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .errors import GuardError, ValidationError
from .measure_core import (
    WEIGHT_TOL,
    DiscreteMeasure,
    MeasureSet,
    check_mixture_weights,
    classical_variance,
    max_variance_mixture,
    min_variance_vertex,
    simplex_grid,
    upper_expect,
    variance_bounds,
)

TREE_LIMIT = 10**7
STATE_LIMIT = 10**7
BRUTE_FORCE_LIMIT = 3 ** 13
CHECK_TOL = 1e-12

PathPayoff = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class HorizonModel:
    base: MeasureSet
    horizon: int

    def __post_init__(self):
        if not isinstance(self.base, MeasureSet):
            raise ValidationError("base must be a MeasureSet")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValidationError(f"horizon must be a positive integer, got {self.horizon}")


@dataclass(frozen=True)
class KernelStrategy:
    """History-dependent choice of a mixture of the base extremes.

    ``choose(step, history)`` is called with 1-based ``step`` and a tuple of the
    ``step - 1`` realised points.
    """

    choose: Callable[[int, tuple], Sequence[float]]
    n_extremes: int

    def weights(self, step: int, history: tuple) -> np.ndarray:
        return check_mixture_weights(self.choose(step, history), self.n_extremes)

    @classmethod
    def constant(cls, weights: Sequence[float]) -> "KernelStrategy":
        w = tuple(float(v) for v in weights)
        return cls(lambda step, history: w, len(w))


@dataclass(frozen=True)
class MixtureGrid:
    """Weightings over the extremes with coordinates in {0, 1/M, ..., 1}."""

    resolution: int

    def __post_init__(self):
        if int(self.resolution) != self.resolution or self.resolution < 1:
            raise ValidationError(f"mixture-grid resolution must be >= 1, got {self.resolution}")

    def points(self, k: int) -> np.ndarray:
        return simplex_grid(k, int(self.resolution))


@dataclass(frozen=True)
class GridSpec:
    """Uniform x-grid request: step ``h`` on ``[-radius, radius]``."""

    h: float = 0.01
    radius: float | None = None


@dataclass
class ValueGrid:
    x_min: float
    x_max: float
    h: float
    values: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        steps = (self.x_max - self.x_min) / self.h
        if self.h <= 0 or abs(steps - round(steps)) > 1e-6:
            raise ValidationError("grid span must be an integer number of steps")
        if not np.all(np.isfinite(self.values)):
            raise GuardError("value grid contains non-finite entries")

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.values.size)

    def at(self, x) -> np.ndarray:
        return np.interp(x, self.x, self.values)


def _all_paths(support: np.ndarray, n: int) -> np.ndarray:
    """Every length-n tuple over ``support``, in lexicographic index order."""
    idx = np.indices((support.size,) * n).reshape(n, -1).T
    return support[idx]


def _leaf_values(phi: PathPayoff, paths: np.ndarray) -> np.ndarray:
    vals = np.asarray(phi(paths), dtype=float).reshape(-1)
    if vals.size != paths.shape[0]:
        raise ValidationError("path payoff must return one value per path row")
    if not np.all(np.isfinite(vals)):
        raise ValidationError("path payoff is not finite on every reachable tuple")
    return vals


def _tree_guard(model: HorizonModel, limit: int = TREE_LIMIT):
    size = model.base.support.size ** model.horizon
    if size > limit:
        raise GuardError(f"history tree has {size} leaves, limit is {limit}")


def joint_expect(model: HorizonModel, strategy: KernelStrategy, phi: PathPayoff) -> float:
    """Expectation of ``phi(X_1..X_n)`` under the law built from ``strategy``."""
    _tree_guard(model)
    base = model.base
    paths: list[tuple] = [()]
    probs = [1.0]
    for step in range(1, model.horizon + 1):
        new_paths, new_probs = [], []
        for hist, pr in zip(paths, probs):
            mix = strategy.weights(step, hist) @ base.weight_matrix
            for x, q in zip(base.support.tolist(), mix.tolist()):
                if q > 0.0:
                    new_paths.append(hist + (x,))
                    new_probs.append(pr * q)
        paths, probs = new_paths, new_probs
    vals = _leaf_values(phi, np.array(paths, dtype=float))
    return float(np.dot(probs, vals))


def sup_expect_history(model: HorizonModel, phi: PathPayoff) -> float:
    """Exact sup of ``E[phi(X_1..X_n)]`` over all history-dependent strategies.

    At every node the one-step value is linear in the kernel's mixture weights,
    so maximising over the extremes is exact.
    """
    _tree_guard(model)
    xs, W = model.base.support, model.base.weight_matrix
    v = _leaf_values(phi, _all_paths(xs, model.horizon))
    for _ in range(model.horizon):
        v = (v.reshape(-1, xs.size) @ W.T).max(axis=1)
    return float(v[0])


def brute_force_sup(model: HorizonModel, phi: PathPayoff) -> float:
    """Sup over every assignment of an extreme measure to every history node.

    Independent of :func:`sup_expect_history`: strategies are enumerated
    explicitly and each joint law is integrated forward along the tree.
    """
    base = model.base
    S, K, n = base.support.size, len(base), model.horizon
    if n > 3 or K > 3 or S > 3:
        raise GuardError("brute force is limited to n <= 3, <= 3 extremes, support <= 3")
    xs, W = base.support, base.weight_matrix
    n_nodes = sum(S**i for i in range(n))
    total = K**n_nodes
    if total > BRUTE_FORCE_LIMIT:
        raise GuardError(f"{total} strategies exceed the brute-force limit")

    leaf_idx = np.indices((S,) * n).reshape(n, -1).T
    vals = _leaf_values(phi, xs[leaf_idx])
    # node id of the history before step i+1: offset of depth i plus its index
    node_ids = np.zeros_like(leaf_idx)
    offset = 0
    for i in range(n):
        prefix = np.zeros(leaf_idx.shape[0], dtype=np.int64)
        for j in range(i):
            prefix = prefix * S + leaf_idx[:, j]
        node_ids[:, i] = offset + prefix
        offset += S**i

    radix = K ** np.arange(n_nodes, dtype=np.int64)
    best = -np.inf
    chunk = max(1, 2**21 // max(1, leaf_idx.shape[0]))
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk), dtype=np.int64)
        choice = (codes[:, None] // radix[None, :]) % K
        prob = np.ones((codes.size, leaf_idx.shape[0]))
        for i in range(n):
            prob *= W[choice[:, node_ids[:, i]], leaf_idx[:, i]]
        best = max(best, float((prob @ vals).max()))
    return best


def _lattice(points: Sequence[float]) -> tuple[Fraction, list[int]]:
    fr = [Fraction(float(p)) for p in points]
    denom = reduce(math.lcm, (f.denominator for f in fr), 1)
    numer = [int(f * denom) for f in fr]
    g = reduce(math.gcd, numer, 0) or 1
    return Fraction(g, denom), [v // g for v in numer]


def _minkowski_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sorted distinct values of ``a_i + b_j`` for sorted integer arrays."""
    span = int(a[-1] - a[0]) + int(b[-1] - b[0]) + 1
    if a.size * b.size <= 2**20 or span > 4 * STATE_LIMIT:
        return np.unique((a[:, None] + b[None, :]).ravel())
    ia = np.zeros(int(a[-1] - a[0]) + 1)
    ib = np.zeros(int(b[-1] - b[0]) + 1)
    ia[a - a[0]] = 1.0
    ib[b - b[0]] = 1.0
    hits = fftconvolve(ia, ib) > 0.5
    return np.flatnonzero(hits).astype(np.int64) + (a[0] + b[0])


def sup_expect_sum(model: HorizonModel, phi: Callable[[np.ndarray], np.ndarray],
                   scaling: float = 1.0) -> float:
    """Exact sup over strategies of ``E[phi(scaling * (X_1 + ... + X_n))]``.

    Support points are mapped exactly onto an integer lattice, so the DP state
    (step, partial sum) is an exact integer and memoisation is drift-free.
    ``phi`` is vectorised over an array of scaled sums.
    """
    base, n = model.base, model.horizon
    unit, lattice = _lattice(base.support.tolist())
    if max(abs(v) for v in lattice) * n >= 2**62:
        raise GuardError("partial sums overflow the integer lattice")
    steps = np.array(lattice, dtype=np.int64)

    # forward sweep: reachable integer sums per step
    layers = [np.zeros(1, dtype=np.int64)]
    for _ in range(n):
        nxt = _minkowski_sum(layers[-1], steps)
        if nxt.size > STATE_LIMIT:
            raise GuardError(f"{nxt.size} reachable sums exceed the limit {STATE_LIMIT}")
        layers.append(nxt)

    # sparse view of the extremes: padded atom indices and weights
    W = base.weight_matrix
    width = int((W > 0).sum(axis=1).max())
    atom_idx = np.zeros((W.shape[0], width), dtype=np.int64)
    atom_w = np.zeros((W.shape[0], width))
    for k, row in enumerate(W):
        nz = np.flatnonzero(row)
        atom_idx[k, : nz.size] = nz
        atom_w[k, : nz.size] = row[nz]

    v = np.asarray(phi(float(unit) * scaling * layers[-1].astype(float)), dtype=float)
    if v.shape != layers[-1].shape or not np.all(np.isfinite(v)):
        raise ValidationError("sum payoff must be finite and vectorised")
    atom_steps = steps[atom_idx]  # (K, width)
    rows_per_chunk = max(1, 2**22 // max(1, atom_idx.size))
    for i in range(n, 0, -1):
        prev, cur = layers[i - 1], layers[i]
        dense = int(cur[-1] - cur[0]) + 1 == cur.size
        out = np.empty(prev.size)
        for s in range(0, prev.size, rows_per_chunk):
            target = prev[s : s + rows_per_chunk, None, None] + atom_steps[None, :, :]
            pos = target - cur[0] if dense else np.searchsorted(cur, target)
            per_extreme = np.einsum("rkw,kw->rk", v[pos], atom_w)
            out[s : s + rows_per_chunk] = per_extreme.max(axis=1)
        v = out
    return float(v[0])


@dataclass
class CheckReport:
    nodes_checked: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _reachable_nodes(model: HorizonModel, strategy: KernelStrategy):
    """Yield ``(step, history, kernel)`` for every positive-probability node."""
    base = model.base
    frontier: list[tuple] = [()]
    for step in range(1, model.horizon + 1):
        nxt = []
        for hist in frontier:
            w = strategy.weights(step, hist)
            kernel = w @ base.weight_matrix
            yield step, hist, kernel
            for x, q in zip(base.support.tolist(), kernel.tolist()):
                if q > 0.0:
                    nxt.append(hist + (x,))
        frontier = nxt


def conditional_range_check(model: HorizonModel, strategy: KernelStrategy,
                            phi: Callable[[np.ndarray], np.ndarray]) -> CheckReport:
    """Every one-step conditional mean of ``phi`` lies in its lower/upper bound."""
    upper = upper_expect(model.base, phi)
    lower = -upper_expect(model.base, lambda x: -np.asarray(phi(x)))
    fx = np.asarray(phi(model.base.support), dtype=float)
    report = CheckReport()
    for step, hist, kernel in _reachable_nodes(model, strategy):
        report.nodes_checked += 1
        val = float(kernel @ fx)
        if not (lower - CHECK_TOL <= val <= upper + CHECK_TOL):
            report.violations.append((step, hist, val, (lower, upper)))
    return report


def _kernel_variance(xs: np.ndarray, kernel: np.ndarray) -> float:
    mu = float(kernel @ xs)
    return float(kernel @ (xs - mu) ** 2)


def conditional_variance_check(model: HorizonModel, strategy: KernelStrategy) -> CheckReport:
    """Every conditional variance lies between the lower and upper variance."""
    vb = variance_bounds(model.base)
    xs = model.base.support
    report = CheckReport()
    for step, hist, kernel in _reachable_nodes(model, strategy):
        report.nodes_checked += 1
        var = _kernel_variance(xs, kernel)
        if not (vb.lower - CHECK_TOL <= var <= vb.upper + CHECK_TOL):
            report.violations.append((step, hist, var, (vb.lower, vb.upper)))
    return report


def _coverage_radius(model: HorizonModel, grid: GridSpec, margin: float) -> float:
    vbar = variance_bounds(model.base).upper
    need = 4.0 * math.sqrt(vbar) * (1.0 + margin)
    if grid.radius is None:
        return max(need, 4.0 * grid.h)
    if grid.radius < need:
        raise GuardError(f"grid radius {grid.radius} does not cover +-{need:.6g}")
    return grid.radius


def centered_sum_dp(model: HorizonModel, phi: Callable[[np.ndarray], np.ndarray],
                    grid: MixtureGrid, xgrid: GridSpec = GridSpec(), margin: float = 0.1
                    ) -> ValueGrid:
    """Backward induction for the conditionally centred, sqrt(n)-scaled sum.

    Centering makes the one-step value nonlinear in the kernel, so the sup over
    the hull is taken over the finite mixture grid; the result is a lower
    approximation that increases with the grid resolution.  Values between
    x-nodes are linearly interpolated and queries beyond the grid clamp to
    the boundary values.
    """
    if not isinstance(grid, MixtureGrid):
        grid = MixtureGrid(grid)
    if xgrid.h <= 0:
        raise ValidationError("x-grid step must be positive")
    base, n = model.base, model.horizon
    radius = _coverage_radius(model, xgrid, margin)
    n_half = math.ceil(radius / xgrid.h - 1e-9)
    x = xgrid.h * np.arange(-n_half, n_half + 1)

    mixes = grid.points(len(base)) @ base.weight_matrix  # (mixtures, support)
    means = mixes @ base.support
    shifts = (base.support[None, :] - means[:, None]) / math.sqrt(n)

    v = np.asarray(phi(x), dtype=float)
    if v.shape != x.shape or not np.all(np.isfinite(v)):
        raise ValidationError("terminal payoff must be finite and vectorised")
    chunk = max(1, 2**22 // (x.size * base.support.size))
    for _ in range(n):
        best = np.full(x.size, -np.inf)
        for s in range(0, mixes.shape[0], chunk):
            q = x[None, :, None] + shifts[s : s + chunk, None, :]
            vals = np.interp(q, x, v)
            cont = np.einsum("mxs,ms->mx", vals, mixes[s : s + chunk])
            np.maximum(best, cont.max(axis=0), out=best)
        v = best
    return ValueGrid(float(x[0]), float(x[-1]), xgrid.h, v, time_index=0)


def centered_sum_sup(model: HorizonModel, phi: Callable[[np.ndarray], np.ndarray],
                     grid: MixtureGrid | int, xgrid: GridSpec = GridSpec(),
                     margin: float = 0.1) -> float:
    vg = centered_sum_dp(model, phi, grid, xgrid, margin)
    return float(vg.at(0.0))


def centered_strategy_value(model: HorizonModel, strategy: KernelStrategy,
                            phi: Callable[[np.ndarray], np.ndarray]) -> float:
    """Exact ``E_P[phi(sum_i (X_i - E_P[X_i | F_{i-1}]) / sqrt(n))]`` by tree enumeration."""
    _tree_guard(model)
    xs = model.base.support
    n = model.horizon
    scale = 1.0 / math.sqrt(n)

    def walk(step, hist, centred, prob):
        if step > n:
            return prob * float(np.asarray(phi(np.array([centred])))[0])
        kernel = strategy.weights(step, hist) @ model.base.weight_matrix
        mu = float(kernel @ xs)
        total = 0.0
        for x, q in zip(xs.tolist(), kernel.tolist()):
            if q > 0.0:
                total += walk(step + 1, hist + (x,), centred + (x - mu) * scale, prob * q)
        return total

    return walk(1, (), 0.0, 1.0)


@dataclass(frozen=True)
class VolatilityMatchingStrategy(KernelStrategy):
    """Two-point mixture strategy steering the conditional variance.

    At each node the kernel is ``w * P_down + (1 - w) * P_up`` with
    ``w = (Vbar - target) / (Vbar - Vlow)``; ``realized_variance`` reports the
    variance the mixture actually has, which in general differs from the
    target because variance is not affine in the mixture.
    """

    target: Callable[[int, tuple], float] | None = None
    v_low: float = 0.0
    v_high: float = 0.0
    up_weights: tuple = ()
    down_weights: tuple = ()
    support: tuple = ()
    weight_matrix: tuple = ()

    def down_weight(self, step: int, history: tuple) -> float:
        if self.v_high == self.v_low:
            return 0.0
        return (self.v_high - self.target(step, history)) / (self.v_high - self.v_low)

    def realized_variance(self, step: int, history: tuple) -> float:
        kernel = self.weights(step, history) @ np.array(self.weight_matrix)
        return _kernel_variance(np.array(self.support), kernel)


def volatility_matching_strategy(model: HorizonModel, target: Callable[[int, tuple], float],
                                 p_up: DiscreteMeasure | None = None,
                                 p_down: DiscreteMeasure | None = None
                                 ) -> VolatilityMatchingStrategy:
    """Build the volatility-matching mixture strategy.

    By default ``P_up`` is the exact variance-maximising mixture of the base
    and ``P_down`` the minimum-variance extreme; explicit measures must be
    representable as mixtures of the extremes and carry the right variance.
    """
    base = model.base
    vb = variance_bounds(base)
    k = len(base)
    if p_up is None:
        up_w, _ = max_variance_mixture(base)
    else:
        up_w = _mixture_weights_of(base, p_up)
    if p_down is None:
        down_w = np.zeros(k)
        down_w[min_variance_vertex(base)] = 1.0
    else:
        down_w = _mixture_weights_of(base, p_down)
    W = base.weight_matrix
    var_up = _kernel_variance(base.support, up_w @ W)
    var_down = _kernel_variance(base.support, down_w @ W)
    if abs(var_up - vb.upper) > 1e-9 or abs(var_down - vb.lower) > 1e-9:
        raise ValidationError(
            f"P_up/P_down variances ({var_up}, {var_down}) do not match ({vb.upper}, {vb.lower})")

    def checked_target(step, history):
        t = float(target(step, history))
        if not (vb.lower - 1e-12 <= t <= vb.upper + 1e-12):
            raise ValidationError(f"target variance {t} outside [{vb.lower}, {vb.upper}]")
        return min(max(t, vb.lower), vb.upper)

    def choose(step, history):
        if vb.upper == vb.lower:
            return up_w
        w = (vb.upper - checked_target(step, history)) / (vb.upper - vb.lower)
        return w * down_w + (1.0 - w) * up_w

    return VolatilityMatchingStrategy(
        choose=choose, n_extremes=k, target=checked_target, v_low=vb.lower, v_high=vb.upper,
        up_weights=tuple(up_w), down_weights=tuple(down_w),
        support=tuple(base.support), weight_matrix=tuple(map(tuple, W)))


def _mixture_weights_of(base: MeasureSet, m: DiscreteMeasure) -> np.ndarray:
    """Recover mixture weights expressing ``m`` in terms of the extremes."""
    target = np.zeros(base.support.size)
    pos = np.searchsorted(base.support, m.x)
    if np.any(pos >= base.support.size) or np.any(base.support[np.minimum(pos, base.support.size - 1)] != m.x):
        raise ValidationError("measure is not supported inside the base set")
    target[pos] = m.p
    W = base.weight_matrix
    A = np.vstack([W.T, np.ones(len(base))])
    b = np.append(target, 1.0)
    w, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.any(w < -1e-9) or np.abs(A @ w - b).max() > 1e-9:
        raise ValidationError("measure is not a mixture of the base extremes")
    w[w < 1e-12] = 0.0  # drop least-squares round-off
    return w / w.sum()


class EmbeddedPath:
    """Piecewise-linear interpolation of ``(0, 0), (1/n, x_1), ..., (1, x_n)``."""

    def __init__(self, x: Sequence[float]):
        x = np.asarray(x, dtype=float).ravel()
        if x.size < 1:
            raise ValidationError("path needs at least one point")
        self.n = x.size
        self.knots = np.concatenate([[0.0], x])
        self.times = np.arange(self.n + 1) / self.n

    def __call__(self, t):
        return np.interp(t, self.times, self.knots)

    def samples(self, m: int) -> np.ndarray:
        return self(np.linspace(0.0, 1.0, m))


def path_embed(x: Sequence[float]) -> EmbeddedPath:
    return EmbeddedPath(x)


def path_functional_eval(kind, path: EmbeddedPath) -> float:
    """Evaluate a path functional exactly on the piecewise-linear path.

    ``kind`` is ``"terminal"``, ``"running_max"``, ``"time_average"`` or a dict
    ``{"kind": "lipschitz_composite", "weights": {name: coef}, "clip": [lo, hi]}``
    denoting a clipped linear combination of the basic functionals.
    """
    if isinstance(kind, str):
        if kind == "terminal":
            return float(path.knots[-1])
        if kind == "running_max":
            return float(path.knots.max())
        if kind == "time_average":
            k = path.knots
            return float((k[:-1] + k[1:]).sum() / (2.0 * path.n))
        raise ValidationError(f"unknown path functional {kind!r}")
    if isinstance(kind, dict) and kind.get("kind") == "lipschitz_composite":
        total = sum(float(c) * path_functional_eval(name, path)
                    for name, c in kind.get("weights", {}).items())
        lo, hi = kind.get("clip", (-math.inf, math.inf))
        return float(min(max(total, lo), hi))
    raise ValidationError(f"unknown path functional {kind!r}")
