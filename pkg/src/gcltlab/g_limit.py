"""The G-normal limit: G-heat solver, tree oracle, capacities and control Monte Carlo.

Terminal payoffs are vectorised callables ``phi(x: ndarray) -> ndarray``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._parallel import ordered_map
from .errors import GuardError, ValidationError
from .kernel_dp import ValueGrid

Payoff = Callable[[np.ndarray], np.ndarray]

DEFAULT_H = 0.01
DEFAULT_CFL = 0.5
DEFAULT_TREE_STEPS = 2048
MC_BLOCK = 8192


@dataclass(frozen=True)
class ThetaInterval:
    sigma2_low: float
    sigma2_high: float

    def __post_init__(self):
        lo, hi = self.sigma2_low, self.sigma2_high
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0 or lo > hi:
            raise ValidationError(f"invalid volatility interval [{lo}, {hi}]")

    @property
    def sigma_low(self) -> float:
        return math.sqrt(self.sigma2_low)

    @property
    def sigma_high(self) -> float:
        return math.sqrt(self.sigma2_high)


def as_theta(theta) -> ThetaInterval:
    if isinstance(theta, ThetaInterval):
        return theta
    lo, hi = theta
    return ThetaInterval(float(lo), float(hi))


def g_function(a, theta) -> np.ndarray | float:
    """``G(a) = (sigma_high^2 * a^+ - sigma_low^2 * a^-) / 2``."""
    theta = as_theta(theta)
    a = np.asarray(a, dtype=float)
    out = 0.5 * (theta.sigma2_high * np.maximum(a, 0.0) - theta.sigma2_low * np.maximum(-a, 0.0))
    return float(out) if out.ndim == 0 else out


def default_radius(theta: ThetaInterval) -> float:
    return 4.0 * theta.sigma_high + 1.0


@dataclass(frozen=True)
class GHeatConfig:
    """Explicit G-heat scheme on ``[-x_radius, x_radius]`` with ``time_steps`` steps over [0, 1]."""

    theta: ThetaInterval
    x_radius: float
    h: float
    time_steps: int
    terminal: Payoff

    def __post_init__(self):
        if self.h <= 0 or self.time_steps < 1:
            raise ValidationError("need h > 0 and at least one time step")
        if self.x_radius < 4.0 * self.theta.sigma_high:
            raise GuardError(f"radius {self.x_radius} below 4*sigma_high")
        dt = 1.0 / self.time_steps
        if dt * self.theta.sigma2_high > self.h**2 * (1 + 1e-12):
            raise GuardError(
                f"CFL violated: dt={dt:.3g} > h^2/sigma_high^2={self.h**2 / self.theta.sigma2_high:.3g}")

    @classmethod
    def build(cls, theta, terminal: Payoff, h: float = DEFAULT_H, x_radius: float | None = None,
              time_steps: int | None = None, cfl: float = DEFAULT_CFL) -> "GHeatConfig":
        theta = as_theta(theta)
        if x_radius is None:
            x_radius = default_radius(theta)
        x_radius = h * math.ceil(x_radius / h - 1e-9)
        if time_steps is None:
            time_steps = max(1, math.ceil(theta.sigma2_high / (cfl * h * h)))
        return cls(theta, x_radius, h, int(time_steps), terminal)


@dataclass
class GSolution:
    value_at_origin: float
    grid: ValueGrid


def _grid(radius: float, h: float) -> np.ndarray:
    m = int(round(radius / h))
    return h * np.arange(-m, m + 1)


def _terminal_values(phi: Payoff, x: np.ndarray) -> np.ndarray:
    u = np.array(np.broadcast_to(np.asarray(phi(x), dtype=float), x.shape))
    if not np.all(np.isfinite(u)):
        raise GuardError("terminal payoff is not finite on the grid")
    return u


def solve_g_heat(config: GHeatConfig) -> GSolution:
    """Explicit monotone scheme ``u <- u + dt * G(D2 u)`` backward from the payoff.

    Boundary nodes stay at the terminal values (Dirichlet data from the payoff).
    """
    th = config.theta
    x = _grid(config.x_radius, config.h)
    u = _terminal_values(config.terminal, x)
    dt = 1.0 / config.time_steps
    hi = 0.5 * dt * th.sigma2_high / config.h**2
    lo = 0.5 * dt * th.sigma2_low / config.h**2
    for _ in range(config.time_steps):
        d2 = u[2:] - 2.0 * u[1:-1] + u[:-2]
        u[1:-1] += np.where(d2 > 0.0, hi * d2, lo * d2)
    vg = ValueGrid(float(x[0]), float(x[-1]), config.h, u, time_index=0)
    return GSolution(float(u[x.size // 2]), vg)


def tree_g_expect(phi: Payoff, theta, n: int = DEFAULT_TREE_STEPS, h: float | None = None,
                  x_radius: float | None = None, vol_grid: np.ndarray | None = None) -> float:
    """Recombining two-point tree, maximising over a volatility grid per node.

    ``v_k(x) = max_s (v_{k+1}(x + s sqrt(dt)) + v_{k+1}(x - s sqrt(dt))) / 2`` with
    linear interpolation.  The volatility grid always contains both endpoints.
    The default x-step is a quarter of the top-volatility move so that the top
    branch lands on nodes.
    """
    th = as_theta(theta)
    if n < 1:
        raise ValidationError("tree needs at least one step")
    sq = math.sqrt(1.0 / n)
    if h is None:
        h = th.sigma_high * sq / 4.0 if th.sigma_high > 0 else DEFAULT_H
    if x_radius is None:
        x_radius = default_radius(th)
    elif x_radius < 4.0 * th.sigma_high:
        raise GuardError(f"tree grid radius {x_radius} does not cover 4*sigma_high")
    x = _grid(h * math.ceil(x_radius / h - 1e-9), h)
    sig2 = np.array([th.sigma2_low, th.sigma2_high] if vol_grid is None else vol_grid, dtype=float)
    sig2 = np.unique(np.concatenate([sig2, [th.sigma2_low, th.sigma2_high]]))
    if sig2.min() < th.sigma2_low - 1e-15 or sig2.max() > th.sigma2_high + 1e-15:
        raise ValidationError("volatility grid leaves the interval")
    moves = np.sqrt(sig2) * sq
    v = _terminal_values(phi, x)
    for _ in range(n):
        cand = 0.5 * (np.interp(x[None, :] + moves[:, None], x, v)
                      + np.interp(x[None, :] - moves[:, None], x, v))
        v = cand.max(axis=0)
    return float(v[x.size // 2])


def g_expect(phi: Payoff, theta, method: str = "pde", tol: float = 0.01, **kwargs):
    """G-expectation of ``phi(xi)``, ``xi ~ N(0, [sigma_low^2, sigma_high^2])``.

    ``method="both"`` returns ``(pde_value, |pde - tree|)`` and raises
    :class:`GuardError` when the two solvers disagree by more than ``tol``.
    """
    th = as_theta(theta)
    if method == "pde":
        return solve_g_heat(GHeatConfig.build(th, phi, **kwargs)).value_at_origin
    if method == "tree":
        return tree_g_expect(phi, th, **kwargs)
    if method == "both":
        pde = solve_g_heat(GHeatConfig.build(th, phi, **kwargs.get("pde", {}))).value_at_origin
        tree = tree_g_expect(phi, th, **kwargs.get("tree", {}))
        gap = abs(pde - tree)
        if gap > tol:
            raise GuardError(f"PDE ({pde:.6g}) and tree ({tree:.6g}) differ by {gap:.3g} > {tol}")
        return pde, gap
    raise ValidationError(f"unknown method {method!r}")


def ramp_indicator(a: float, b: float, inner: float, outer: float) -> Payoff:
    """Piecewise-linear function equal to 1 on ``[a + inner, b - inner]`` and 0
    outside ``[a - outer, b + outer]``; exactly one of ``inner``/``outer`` is
    normally non-zero.  Infinite endpoints have no ramp on that side.
    """
    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        width = inner + outer
        if math.isfinite(a):
            out = np.minimum(out, np.clip((x - (a - outer)) / width, 0.0, 1.0))
        if math.isfinite(b):
            out = np.minimum(out, np.clip(((b + outer) - x) / width, 0.0, 1.0))
        return out
    return f


@dataclass(frozen=True)
class CapacityBracket:
    lower: float
    upper: float
    epsilon: float

    def __contains__(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


def capacity_interval(a: float, b: float, theta, epsilon: float, method: str = "pde",
                      **kwargs) -> CapacityBracket:
    """Squeeze the upper probability of ``[a, b]`` between two ramp payoffs.

    ``lower`` uses the inner ramp (1 on ``[a+eps, b-eps]``, 0 off ``[a, b]``)
    and ``upper`` the outer ramp (1 on ``[a, b]``, 0 off ``[a-eps, b+eps]``).
    """
    if not a < b:
        raise ValidationError(f"need a < b, got [{a}, {b}]")
    if not 0 < epsilon < (b - a) / 2:
        raise ValidationError(f"epsilon {epsilon} outside (0, (b-a)/2)")
    th = as_theta(theta)
    if not math.isfinite(a) and not math.isfinite(b):
        return CapacityBracket(1.0, 1.0, epsilon)
    g = ramp_indicator(a, b, epsilon, 0.0)
    f = ramp_indicator(a, b, 0.0, epsilon)
    lower = g_expect(g, th, method=method, **kwargs)
    upper = g_expect(f, th, method=method, **kwargs)
    if method == "both":
        lower, upper = lower[0], upper[0]
    return CapacityBracket(min(max(lower, 0.0), 1.0), min(max(upper, 0.0), 1.0), epsilon)


Control = Callable[[float, np.ndarray], np.ndarray]
PathFunctional = Callable[[np.ndarray], np.ndarray]


def terminal(phi: Payoff) -> PathFunctional:
    """Lift a terminal payoff to a functional of sampled paths ``(N, steps + 1)``."""
    return lambda paths: phi(paths[:, -1])


def control_mc_lower_bound(phi_path: PathFunctional, theta, control: Control,
                           paths: int = 100_000, seed: int = 0, steps: int = 64
                           ) -> tuple[float, float]:
    """Monte Carlo value of one admissible volatility control.

    ``control(t, history)`` receives the time and the ``(N, k + 1)`` array of
    path values up to ``t`` and returns volatilities in ``[sigma_low, sigma_high]``.
    Paths are simulated in fixed blocks, each with its own Philox stream spawned
    from ``seed``, so the result does not depend on the worker count.
    Returns ``(estimate, standard_error)``.
    """
    th = as_theta(theta)
    if paths < 100:
        raise ValidationError("need at least 100 paths")
    dt = 1.0 / steps
    n_blocks = math.ceil(paths / MC_BLOCK)
    seqs = np.random.SeedSequence(seed).spawn(n_blocks)

    def run_block(b):
        size = min(MC_BLOCK, paths - b * MC_BLOCK)
        rng = np.random.Generator(np.random.Philox(seqs[b]))
        y = np.zeros((size, steps + 1))
        for k in range(steps):
            sigma = np.broadcast_to(np.asarray(control(k * dt, y[:, : k + 1]), dtype=float), (size,))
            if np.any(sigma < th.sigma_low - 1e-12) or np.any(sigma > th.sigma_high + 1e-12):
                raise ValidationError("control leaves the admissible volatility range")
            y[:, k + 1] = y[:, k] + sigma * math.sqrt(dt) * rng.standard_normal(size)
        vals = np.asarray(phi_path(y), dtype=float)
        return vals.sum(), (vals**2).sum()

    sums = ordered_map(run_block, range(n_blocks))
    s1 = math.fsum(s for s, _ in sums)
    s2 = math.fsum(q for _, q in sums)
    mean = s1 / paths
    var = max(s2 / paths - mean * mean, 0.0) * paths / (paths - 1)
    return mean, math.sqrt(var / paths)


def control_from_spec(spec: str, theta) -> Control:
    """Parse a control name: ``high``, ``low``, ``const:<sigma>`` or ``switch:<c>``.

    ``switch:<c>`` uses the top volatility while ``|y| < c`` and the bottom one
    otherwise.
    """
    th = as_theta(theta)
    name, _, arg = spec.partition(":")
    if name == "high":
        return lambda t, y: th.sigma_high
    if name == "low":
        return lambda t, y: th.sigma_low
    try:
        value = float(arg)
    except ValueError as exc:
        raise ValidationError(f"bad control spec {spec!r}") from exc
    if name == "const":
        if not th.sigma_low <= value <= th.sigma_high:
            raise ValidationError(f"constant control {value} outside [{th.sigma_low}, {th.sigma_high}]")
        return lambda t, y: value
    if name == "switch":
        return lambda t, y: np.where(np.abs(y[:, -1]) < value, th.sigma_high, th.sigma_low)
    raise ValidationError(f"unknown control {spec!r}")
