"""Named terminal payoffs and parsing of payoff expressions in ``x``."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def square(x):
    return np.asarray(x, dtype=float) ** 2


def identity(x):
    return np.asarray(x, dtype=float)


def tent(x):
    """``1 - min(|x|, 1)``: bounded and 1-Lipschitz."""
    return 1.0 - np.minimum(np.abs(x), 1.0)


def one_minus_abs(x):
    return 1.0 - np.abs(x)


def d_unit(x):
    """Distance to ``[0, 1]``."""
    x = np.asarray(x, dtype=float)
    return np.maximum(np.maximum(-x, x - 1.0), 0.0)


NAMED = {
    "square": square,
    "x2": square,
    "identity": identity,
    "x": identity,
    "tent": tent,
    "one_minus_abs": one_minus_abs,
    "d_unit": d_unit,
}


def parse_payoff(spec: str):
    """Resolve a payoff name, or compile an expression in ``x`` with sympy."""
    if spec in NAMED:
        return NAMED[spec]
    import sympy

    x = sympy.Symbol("x", real=True)
    try:
        expr = sympy.sympify(spec, locals={"x": x})
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ValidationError(f"cannot parse payoff {spec!r}: {exc}") from exc
    if expr.free_symbols - {x}:
        raise ValidationError(f"payoff {spec!r} may only depend on x")
    fn = sympy.lambdify(x, expr, modules="numpy")

    def payoff(values):
        values = np.asarray(values, dtype=float)
        return np.array(np.broadcast_to(np.asarray(fn(values), dtype=float), values.shape))

    return payoff
