"""Interpreter core for the autodiff engine.

Every differentiable program in this library is a composition of registered
primitives (see primitives.py). A primitive call inspects its arguments: plain
numpy values evaluate eagerly, while values tagged by an active interpretation
(a reverse-mode tape or a truncated-series jet) are routed to that
interpretation's rule. Interpretations are ranked by a creation-order level, so
they nest: a jet expansion opened while a tape is recording sees the tape's
values as constants of the expansion, and the series arithmetic it emits is
itself recorded on the tape. This is what lets Taylor-expanded predictions sit
inside training losses, and lets an outer tape differentiate through a
gradient computed on an inner tape.

Rules (both pullbacks and series recurrences) are written in terms of the
generic primitives, never raw numpy, so the nesting above needs no special
cases.
"""

from __future__ import annotations

import itertools

import numpy as np

from ..errors import NonFiniteError, UnsupportedError

MAX_JET_ORDER = 8

_level_counter = itertools.count()


def next_level() -> int:
    return next(_level_counter)


class Trace:
    """One active interpretation (a tape or a jet expansion)."""

    def __init__(self):
        self.level = next_level()

    def process(self, prim, args, kwargs):
        raise NotImplementedError


class Box:
    """A value owned by a trace. Arithmetic dispatches to the trace's rules."""

    __slots__ = ("_trace",)

    # Keep numpy from broadcasting element-wise over us; binary ops fall back
    # to our reflected operators instead.
    __array_ufunc__ = None

    @property
    def shape(self):
        raise NotImplementedError

    @property
    def ndim(self):
        return len(self.shape)

    # Operator sugar; the table is filled by primitives.py at import time.
    def __add__(self, other):
        return _op("add")(self, other)

    def __radd__(self, other):
        return _op("add")(other, self)

    def __sub__(self, other):
        return _op("sub")(self, other)

    def __rsub__(self, other):
        return _op("sub")(other, self)

    def __mul__(self, other):
        return _op("mul")(self, other)

    def __rmul__(self, other):
        return _op("mul")(other, self)

    def __truediv__(self, other):
        return _op("div")(self, other)

    def __rtruediv__(self, other):
        return _op("div")(other, self)

    def __matmul__(self, other):
        return _op("matmul")(self, other)

    def __rmatmul__(self, other):
        return _op("matmul")(other, self)

    def __neg__(self):
        return _op("neg")(self)

    def __pow__(self, exponent):
        return _op("power")(self, exponent=float(exponent))


_operator_table: dict[str, "Primitive"] = {}


def _op(name):
    try:
        return _operator_table[name]
    except KeyError:  # pragma: no cover - only during partial imports
        raise UnsupportedError(f"operator '{name}' not registered yet")


def register_operator(name, prim):
    _operator_table[name] = prim


class _ZeroCoeff:
    """Sentinel for a structurally zero series coefficient."""

    __slots__ = ()

    def __repr__(self):
        return "ZERO"


ZERO = _ZeroCoeff()


def is_zero(x) -> bool:
    return x is ZERO


def as_value(x):
    """Coerce a plain argument to a float64 ndarray (boxes pass through)."""
    if isinstance(x, Box):
        return x
    return np.asarray(x, dtype=np.float64)


def value_of(x):
    """Strip all interpretation layers, returning the underlying ndarray."""
    while isinstance(x, Box):
        x = x.primal_value()
    return np.asarray(x, dtype=np.float64)


def shape_of(x):
    if isinstance(x, Box):
        return tuple(x.shape)
    return np.shape(x)


def leaves_of(args):
    """Iterate argument leaves; a list/tuple argument (concat) is flattened."""
    for a in args:
        if isinstance(a, (list, tuple)):
            yield from a
        else:
            yield a


def map_structure(fn, args):
    out = []
    for a in args:
        if isinstance(a, (list, tuple)):
            out.append([fn(x) for x in a])
        else:
            out.append(fn(a))
    return tuple(out)


class Primitive:
    """A registered operation: eager impl plus pullback and series rules."""

    __slots__ = ("name", "impl", "vjp_arg", "jet_rule")

    def __init__(self, name, impl, vjp_arg=None, jet_rule=None):
        self.name = name
        self.impl = impl
        self.vjp_arg = vjp_arg
        self.jet_rule = jet_rule

    def __call__(self, *args, **kwargs):
        return bind(self, args, kwargs)

    def __repr__(self):
        return f"<primitive {self.name}>"


def bind(prim, args, kwargs):
    top = None
    for leaf in leaves_of(args):
        if isinstance(leaf, Box):
            trace = leaf._trace
            if top is None or trace.level > top.level:
                top = trace
    if top is None:
        # non-finite results raise below, so numpy's own warnings are noise
        with np.errstate(all="ignore"):
            out = prim.impl(*map_structure(as_value, args), **kwargs)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(prim.name)
        return out
    return top.process(prim, args, kwargs)
