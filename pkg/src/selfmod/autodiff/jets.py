"""Truncated Taylor-series propagation (jets).

A jet of order k carries a primal value plus k series coefficients. Pushing a
jet through a program yields the Taylor coefficients of the curve
t -> f(primal + sum_i series[i] t^i) at t = 0 in a single pass, instead of the
exponentially priced nesting of first-order passes. That nesting is kept here
too, as nested_derivative_oracle, because it is the natural independent check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, OrderTooHighError, ShapeError, UnsupportedError
from .core import MAX_JET_ORDER, ZERO, Box, Trace, as_value, is_zero, shape_of
from .primitives import broadcast_to


@dataclass
class Jet:
    """Primal value plus truncated Taylor coefficients.

    coeffs[0] is the primal; coeffs[n] is the n-th series coefficient (the
    n-th derivative divided by n factorial). All coefficients share one shape.
    """

    order: int
    coeffs: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.coeffs) != self.order + 1:
            raise ShapeError(
                f"jet of order {self.order} needs {self.order + 1} coefficients, "
                f"got {len(self.coeffs)}"
            )
        shapes = {shape_of(c) for c in self.coeffs}
        if len(shapes) > 1:
            raise ShapeError(f"jet coefficients disagree on shape: {shapes}")

    @property
    def primal(self):
        return self.coeffs[0]

    def truncate(self, order):
        """The lower-order jet sharing this jet's leading coefficients."""
        if order > self.order:
            raise OrderTooHighError(f"cannot truncate order {self.order} to {order}")
        return Jet(order=order, coeffs=self.coeffs[: order + 1])


class JetBox(Box):
    __slots__ = ("coeffs",)

    def __init__(self, trace, coeffs):
        self._trace = trace
        self.coeffs = coeffs

    def primal_value(self):
        return self.coeffs[0]

    @property
    def shape(self):
        return shape_of(self.coeffs[0])


class JetTrace(Trace):
    def __init__(self, order):
        super().__init__()
        self.order = order

    def process(self, prim, args, kwargs):
        rule = prim.jet_rule
        if rule is None:
            raise UnsupportedError(
                f"primitive '{prim.name}' has no series rule"
            )
        k = self.order

        def coeffs_of(x):
            if isinstance(x, JetBox) and x._trace is self:
                return x.coeffs
            return [x] + [ZERO] * k

        coeff_args = []
        for a in args:
            if isinstance(a, (list, tuple)):
                coeff_args.append([coeffs_of(x) for x in a])
            else:
                coeff_args.append(coeffs_of(a))
        out = rule(k, *coeff_args, **kwargs)
        return JetBox(self, out)


def jet_propagate(f, primal, series, max_order=MAX_JET_ORDER):
    """Push the curve primal + sum_i series[i] t^i through f.

    Returns a Jet whose coeffs[n] is the n-th Taylor coefficient of the output
    curve at t=0. The order equals len(series) and is capped at max_order.
    """
    k = len(series)
    if k < 1:
        raise ConfigError("jet_propagate needs at least one series coefficient")
    if k > max_order:
        raise OrderTooHighError(f"order {k} exceeds the configured maximum {max_order}")
    primal = as_value(primal)
    p_shape = shape_of(primal)
    coeffs = [primal]
    for i, s in enumerate(series):
        s = as_value(s)
        if shape_of(s) != p_shape:
            raise ShapeError(
                f"series coefficient {i} has shape {shape_of(s)}, primal {p_shape}"
            )
        coeffs.append(s)
    trace = JetTrace(k)
    out = f(JetBox(trace, coeffs))
    if isinstance(out, JetBox) and out._trace is trace:
        out_coeffs = out.coeffs
    else:
        out_coeffs = [out] + [ZERO] * k
    target = shape_of(out_coeffs[0])
    final = []
    for c in out_coeffs:
        if is_zero(c):
            final.append(np.zeros(target))
        elif shape_of(c) != target:
            final.append(broadcast_to(c, shape=target))
        else:
            final.append(c)
    return Jet(order=k, coeffs=final)


def nested_derivative_oracle(f, primal, direction, n):
    """n-th directional derivative by n-fold nesting of first-order passes.

    Costs O(2^n) evaluations of f, which is why it is capped at n <= 4 and
    kept as a test oracle rather than a production path. Relates to
    jet_propagate by coeffs[n] * n! == oracle(f, primal, v, n) for a series
    [v, 0, ..., 0].
    """
    if n > 4:
        raise ConfigError("nested oracle is capped at order 4; use jet_propagate")
    direction = as_value(direction)
    g = f
    for _ in range(n):
        g = _directional(g, direction)
    return g(as_value(primal))


def _directional(f, v):
    def df(x):
        return jet_propagate(f, x, [v]).coeffs[1]

    return df
