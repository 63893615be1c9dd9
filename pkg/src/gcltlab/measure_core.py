"""Finitely supported measures, their convex hulls and upper/lower moments.

Payoff functions passed to this module are vectorised: they receive a
numpy array of support points and return an array of the same shape.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError

WEIGHT_TOL = 1e-12
TERNARY_TOL = 1e-10

Payoff = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability measure with finitely many atoms.

    Construction canonicalises the atoms: points are sorted, duplicates merged
    and zero-weight atoms dropped, so equal measures compare equal.
    """

    points: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        wts = np.asarray(self.weights, dtype=float).ravel()
        if pts.size == 0 or pts.size != wts.size:
            raise ValidationError("a measure needs matching, non-empty points and weights")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(wts))):
            raise ValidationError("atoms must be finite")
        if np.any(wts < 0):
            raise ValidationError(f"negative weight in {wts.tolist()}")
        total = wts.sum()
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValidationError(f"weights sum to {total!r}, not 1")
        uniq, inverse = np.unique(pts, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inverse, wts)
        keep = merged > 0
        object.__setattr__(self, "points", tuple(float(v) for v in uniq[keep]))
        object.__setattr__(self, "weights", tuple(float(v) for v in merged[keep] / total))

    @classmethod
    def from_atoms(cls, atoms: Sequence[Sequence[float]]) -> "DiscreteMeasure":
        atoms = list(atoms)
        return cls(tuple(a[0] for a in atoms), tuple(a[1] for a in atoms))

    @cached_property
    def x(self) -> np.ndarray:
        return np.array(self.points)

    @cached_property
    def p(self) -> np.ndarray:
        return np.array(self.weights)

    @property
    def mean(self) -> float:
        return float(self.p @ self.x)

    @property
    def variance(self) -> float:
        return classical_variance(self)

    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.points, self.weights))


def point_mass(x: float) -> DiscreteMeasure:
    return DiscreteMeasure((x,), (1.0,))


def bernoulli(p: float, low: float = 0.0, high: float = 1.0) -> DiscreteMeasure:
    return DiscreteMeasure((low, high), (1.0 - p, p))


@dataclass(frozen=True)
class MeasureSet:
    """Convex hull of finitely many extreme measures."""

    extremes: tuple[DiscreteMeasure, ...]

    def __post_init__(self):
        ext = tuple(self.extremes)
        if not ext:
            raise ValidationError("a measure set needs at least one extreme measure")
        if not all(isinstance(m, DiscreteMeasure) for m in ext):
            raise ValidationError("extremes must be DiscreteMeasure instances")
        object.__setattr__(self, "extremes", ext)

    def __len__(self):
        return len(self.extremes)

    @cached_property
    def support(self) -> np.ndarray:
        """Sorted union of the extremes' supports."""
        return np.unique(np.concatenate([m.x for m in self.extremes]))

    @cached_property
    def weight_matrix(self) -> np.ndarray:
        """``W[k, j]`` = mass the k-th extreme puts on ``support[j]``."""
        W = np.zeros((len(self.extremes), self.support.size))
        for k, m in enumerate(self.extremes):
            W[k, np.searchsorted(self.support, m.x)] = m.p
        return W

    @cached_property
    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """First and second raw moments of every extreme."""
        W = self.weight_matrix
        return W @ self.support, W @ self.support**2

    def mixture(self, weights: Sequence[float]) -> DiscreteMeasure:
        w = check_mixture_weights(weights, len(self.extremes))
        return DiscreteMeasure(tuple(self.support), tuple(w @ self.weight_matrix))


def check_mixture_weights(weights, k: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != k:
        raise ValidationError(f"expected {k} mixture weights, got {w.size}")
    if np.any(w < -WEIGHT_TOL) or abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValidationError(f"invalid mixture weights {w.tolist()}")
    w = np.clip(w, 0.0, None)
    return w / w.sum()


@dataclass(frozen=True)
class MeanInterval:
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValidationError(f"mean interval [{self.lower}, {self.upper}] is reversed")

    def __contains__(self, mu: float) -> bool:
        return self.lower <= mu <= self.upper


@dataclass(frozen=True)
class VarianceBounds:
    lower: float
    upper: float
    argmin_mean_upper: float


def expect(m: DiscreteMeasure, f: Payoff) -> float:
    """Classical expectation of ``f`` under ``m``."""
    return float(m.p @ np.asarray(f(m.x), dtype=float))


def upper_expect(S: MeasureSet, f: Payoff) -> float:
    # linear in the mixture weights, so the sup over the hull sits at an extreme
    return max(expect(m, f) for m in S.extremes)


def lower_expect(S: MeasureSet, f: Payoff) -> float:
    return -upper_expect(S, lambda x: -np.asarray(f(x)))


def mean_interval(S: MeasureSet) -> MeanInterval:
    upper = upper_expect(S, lambda x: x)
    lower = -upper_expect(S, lambda x: -x) + 0.0
    return MeanInterval(lower, upper)


def classical_variance(m: DiscreteMeasure) -> float:
    mu = m.mean
    return float(m.p @ (m.x - mu) ** 2)


def _upper_second_moment(S: MeasureSet, mu: float) -> float:
    return max(float(m.p @ (m.x - mu) ** 2) for m in S.extremes)


def variance_bounds(S: MeasureSet) -> VarianceBounds:
    """Upper and lower variance of the coordinate under the hull of ``S``.

    The upper variance minimises ``mu -> max_k E_k[(X - mu)^2]`` over the mean
    interval.  Every branch is ``mu^2`` plus an affine function, so the
    objective is convex; ternary search brackets the minimiser and the result
    is snapped to the exact candidate set (branch vertices and pairwise
    crossings), which removes the search tolerance from the returned value.
    """
    iv = mean_interval(S)
    lo, hi = iv.lower, iv.upper
    while hi - lo > TERNARY_TOL:
        a = lo + (hi - lo) / 3
        b = hi - (hi - lo) / 3
        if _upper_second_moment(S, a) <= _upper_second_moment(S, b):
            hi = b
        else:
            lo = a
    best_mu = 0.5 * (lo + hi)
    best = _upper_second_moment(S, best_mu)

    m1, m2 = S.moments
    candidates = [iv.lower, iv.upper, *m1.tolist()]
    for k, l in itertools.combinations(range(len(m1)), 2):
        if m1[k] != m1[l]:
            candidates.append((m2[k] - m2[l]) / (2.0 * (m1[k] - m1[l])))
    for mu in candidates:
        if iv.lower <= mu <= iv.upper:
            val = _upper_second_moment(S, mu)
            if val < best:
                best, best_mu = val, mu

    lower = min(classical_variance(m) for m in S.extremes)
    return VarianceBounds(lower=lower, upper=best, argmin_mean_upper=float(best_mu))


@lru_cache(maxsize=32)
def simplex_grid(k: int, resolution: int) -> np.ndarray:
    """All weightings of ``k`` items with coordinates in {0, 1/M, ..., 1}.

    Rows come in a fixed order and always include the ``k`` vertices.
    """
    if k < 1 or resolution < 1:
        raise ValidationError("simplex grid needs k >= 1 and resolution >= 1")
    rows = []
    for bars in itertools.combinations(range(resolution + k - 1), k - 1):
        edges = (-1, *bars, resolution + k - 1)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(k)])
    grid = np.array(rows, dtype=float) / resolution
    grid.setflags(write=False)
    return grid


def variance_oracle(S: MeasureSet, grid_step: float) -> tuple[float, float]:
    """Brute-force max/min of the classical variance over a mixture grid."""
    if not grid_step > 0 or grid_step > 0.5:
        raise ValidationError(f"grid_step must lie in (0, 0.5], got {grid_step}")
    resolution = math.ceil(1.0 / grid_step - 1e-9)
    G = simplex_grid(len(S), resolution)
    m1, m2 = S.moments
    mean = G @ m1
    var = G @ m2 - mean**2
    return float(var.max()), float(var.min())


def max_variance_mixture(S: MeasureSet) -> tuple[np.ndarray, float]:
    """Mixture weights over the extremes attaining the largest classical variance.

    The variance only depends on the first two moments of the mixture and is
    increasing in the second one, so the maximiser lies on an edge of the
    moment polygon, i.e. on a segment between two extremes.  Each segment is a
    one-dimensional concave quadratic maximised in closed form.
    """
    m1, m2 = S.moments
    k = len(m1)
    best_w = np.zeros(k)
    vert = m2 - m1**2
    j = int(np.argmax(vert))
    best_w[j] = 1.0
    best = float(vert[j])
    for a, b in itertools.combinations(range(k), 2):
        d1 = m1[a] - m1[b]
        if d1 == 0.0:
            continue
        # V(t) for weight t on a: (m2b + t*d2) - (m1b + t*d1)^2
        d2 = m2[a] - m2[b]
        t = (d2 - 2.0 * m1[b] * d1) / (2.0 * d1 * d1)
        if 0.0 < t < 1.0:
            val = (m2[b] + t * d2) - (m1[b] + t * d1) ** 2
            if val > best:
                best = float(val)
                best_w = np.zeros(k)
                best_w[a], best_w[b] = t, 1.0 - t
    return best_w, best


def min_variance_vertex(S: MeasureSet) -> int:
    """Index of the extreme with the smallest variance (lowest index on ties)."""
    return int(np.argmin([classical_variance(m) for m in S.extremes]))


def tail_deficiency(S: MeasureSet, lam: float) -> float:
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    return upper_expect(S, lambda x: np.maximum(x**2 - lam, 0.0))


def measure_set_from_json(doc: dict) -> MeasureSet:
    try:
        extremes = [DiscreteMeasure.from_atoms(e["atoms"]) for e in doc["extremes"]]
    except (KeyError, TypeError, IndexError) as exc:
        raise ValidationError(f"malformed measure-set document: {exc}") from exc
    return MeasureSet(tuple(extremes))


def measure_set_to_json(S: MeasureSet) -> dict:
    return {"extremes": [{"atoms": [list(a) for a in m.atoms()]} for m in S.extremes]}
