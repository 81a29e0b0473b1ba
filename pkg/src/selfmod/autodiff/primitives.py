"""The registered primitive set.

Each primitive carries three pieces:
  impl      eager float64 numpy computation (finiteness-checked by bind),
  vjp_arg   per-argument pullback, written with the generic primitives,
  jet_rule  truncated-series recurrence, also written with the primitives.

Series coefficients use the ZERO sentinel for structurally zero terms so that
a series like [v, 0, ..., 0] costs nothing to push through linear stretches.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, UnsupportedError
from .core import (
    ZERO,
    Primitive,
    is_zero,
    register_operator,
    shape_of,
    value_of,
)

# ---------------------------------------------------------------------------
# series coefficient helpers (ZERO-aware wrappers over the generic ops)
# ---------------------------------------------------------------------------


def _jadd(a, b):
    if is_zero(a):
        return b
    if is_zero(b):
        return a
    return add(a, b)


def _jsub(a, b):
    if is_zero(b):
        return a
    if is_zero(a):
        return neg(b)
    return sub(a, b)


def _jneg(a):
    return ZERO if is_zero(a) else neg(a)


def _jscale(c, a):
    if is_zero(a) or c == 0.0:
        return ZERO
    if c == 1.0:
        return a
    return mul(float(c), a)


def _jbilinear(op, a, b, k):
    """Cauchy product through a bilinear primitive (mul, matmul)."""
    out = []
    for n in range(k + 1):
        acc = ZERO
        for i in range(n + 1):
            ai, bni = a[i], b[n - i]
            if is_zero(ai) or is_zero(bni):
                continue
            acc = _jadd(acc, op(ai, bni))
        out.append(acc)
    return out


def _dconv(a, w, n):
    """Sum_{i=1..n} i * a[i] * w[n-i], the derivative-series convolution."""
    acc = ZERO
    for i in range(1, n + 1):
        ai, wni = a[i], w[n - i]
        if is_zero(ai) or is_zero(wni):
            continue
        acc = _jadd(acc, _jscale(i, mul(ai, wni)))
    return acc


def _materialize(coeff, like):
    """Replace ZERO with concrete zeros shaped like the reference value."""
    if is_zero(coeff):
        return np.zeros(shape_of(like), dtype=np.float64)
    return coeff


def _linear_unary_jet(prim_fn):
    def rule(k, a, **kwargs):
        return [ZERO if is_zero(c) else prim_fn(c, **kwargs) for c in a]

    return rule


# ---------------------------------------------------------------------------
# shape utilities used by pullbacks
# ---------------------------------------------------------------------------


def unbroadcast(g, target_shape):
    """Reduce a cotangent back to the shape numpy broadcast it from."""
    target_shape = tuple(target_shape)
    while len(shape_of(g)) > len(target_shape):
        g = sum_(g, axis=0)
    axes = tuple(
        i
        for i, (gd, td) in enumerate(zip(shape_of(g), target_shape))
        if td == 1 and gd != 1
    )
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    return g


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _expand_reduced(g, in_shape, axis, keepdims):
    """Broadcast a reduced cotangent back over the reduced axes."""
    axes = _normalize_axes(axis, len(in_shape))
    if not keepdims:
        kept = list(shape_of(g))
        full = []
        j = 0
        for i in range(len(in_shape)):
            if i in axes:
                full.append(1)
            else:
                full.append(kept[j] if j < len(kept) else 1)
                j += 1
        g = reshape(g, shape=tuple(full))
    return broadcast_to(g, shape=tuple(in_shape))


# ---------------------------------------------------------------------------
# primitive definitions
# ---------------------------------------------------------------------------


def _def(name, impl, vjp_arg=None, jet_rule=None, operator=False):
    prim = Primitive(name, impl, vjp_arg, jet_rule)
    if operator:
        register_operator(name, prim)
    REGISTRY[name] = prim
    return prim


REGISTRY: dict[str, Primitive] = {}

# --- arithmetic ---

add = _def(
    "add",
    np.add,
    vjp_arg=lambda i, g, ans, vals, kw: unbroadcast(g, shape_of(vals[i])),
    jet_rule=lambda k, a, b: [_jadd(a[n], b[n]) for n in range(k + 1)],
    operator=True,
)

sub = _def(
    "sub",
    np.subtract,
    vjp_arg=lambda i, g, ans, vals, kw: unbroadcast(
        g if i == 0 else neg(g), shape_of(vals[i])
    ),
    jet_rule=lambda k, a, b: [_jsub(a[n], b[n]) for n in range(k + 1)],
    operator=True,
)

neg = _def(
    "neg",
    np.negative,
    vjp_arg=lambda i, g, ans, vals, kw: neg(g),
    jet_rule=lambda k, a: [_jneg(c) for c in a],
    operator=True,
)


def _mul_vjp(i, g, ans, vals, kw):
    other = vals[1 - i]
    return unbroadcast(mul(g, other), shape_of(vals[i]))


mul = _def(
    "mul",
    np.multiply,
    vjp_arg=_mul_vjp,
    jet_rule=lambda k, a, b: _jbilinear(mul, a, b, k),
    operator=True,
)


def _div_vjp(i, g, ans, vals, kw):
    a, b = vals
    if i == 0:
        return unbroadcast(div(g, b), shape_of(a))
    return unbroadcast(neg(div(mul(g, ans), b)), shape_of(b))


def _div_jet(k, a, b):
    out = []
    for n in range(k + 1):
        num = a[n]
        for i in range(n):
            if is_zero(out[i]) or is_zero(b[n - i]):
                continue
            num = _jsub(num, mul(out[i], b[n - i]))
        out.append(ZERO if is_zero(num) else div(num, b[0]))
    return out


div = _def("div", np.divide, vjp_arg=_div_vjp, jet_rule=_div_jet, operator=True)


def _matmul_impl(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(
            f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}"
        )
    return np.matmul(a, b)


def _matmul_vjp(i, g, ans, vals, kw):
    a, b = vals
    if i == 0:
        return unbroadcast(matmul(g, swap_last2(b)), shape_of(a))
    return unbroadcast(matmul(swap_last2(a), g), shape_of(b))


matmul = _def(
    "matmul",
    _matmul_impl,
    vjp_arg=_matmul_vjp,
    jet_rule=lambda k, a, b: _jbilinear(matmul, a, b, k),
    operator=True,
)


def _power_impl(x, *, exponent):
    return np.power(x, exponent)


def _power_vjp(i, g, ans, vals, kw):
    c = kw["exponent"]
    if c == 0.0:
        return None
    (x,) = vals
    return mul(mul(c, g), power(x, exponent=c - 1.0))


def _power_jet(k, a, *, exponent):
    c = exponent
    if c == 0.0:
        return [np.ones(shape_of(a[0]))] + [ZERO] * k
    if c == 1.0:
        return list(a)
    if float(c).is_integer() and 1.0 < c <= 16.0:
        out = list(a)
        for _ in range(int(c) - 1):
            out = _jbilinear(mul, out, a, k)
        return out
    if float(c).is_integer() and c < 0.0:
        pos = _power_jet(k, a, exponent=-c)
        one = [np.ones(shape_of(a[0]))] + [ZERO] * k
        return _div_jet(k, one, pos)
    la = _log_jet(k, a)
    return _exp_jet(k, [_jscale(c, x) for x in la])


power = _def(
    "power", _power_impl, vjp_arg=_power_vjp, jet_rule=_power_jet, operator=True
)


def _square_jet(k, a):
    return _jbilinear(mul, a, a, k)


square = _def(
    "square",
    np.square,
    vjp_arg=lambda i, g, ans, vals, kw: mul(mul(2.0, g), vals[0]),
    jet_rule=_square_jet,
)


def _sqrt_jet(k, a):
    out = [sqrt(a[0])]
    for n in range(1, k + 1):
        num = a[n]
        for i in range(1, n):
            if is_zero(out[i]) or is_zero(out[n - i]):
                continue
            num = _jsub(num, mul(out[i], out[n - i]))
        out.append(ZERO if is_zero(num) else div(num, mul(2.0, out[0])))
    return out


sqrt = _def(
    "sqrt",
    np.sqrt,
    vjp_arg=lambda i, g, ans, vals, kw: div(g, mul(2.0, ans)),
    jet_rule=_sqrt_jet,
)

# --- transcendental ---


def _exp_jet(k, a):
    out = [exp(a[0])]
    for n in range(1, k + 1):
        acc = _dconv(a, out, n)
        out.append(_jscale(1.0 / n, acc))
    return out


exp = _def(
    "exp",
    np.exp,
    vjp_arg=lambda i, g, ans, vals, kw: mul(g, ans),
    jet_rule=_exp_jet,
)


def _log_jet(k, a):
    out = [log(a[0])]
    for n in range(1, k + 1):
        num = a[n]
        for j in range(1, n):
            if is_zero(a[j]) or is_zero(out[n - j]):
                continue
            num = _jsub(num, _jscale((n - j) / n, mul(a[j], out[n - j])))
        out.append(ZERO if is_zero(num) else div(num, a[0]))
    return out


log = _def(
    "log",
    np.log,
    vjp_arg=lambda i, g, ans, vals, kw: div(g, vals[0]),
    jet_rule=_log_jet,
)


def _sin_cos_series(k, a):
    s = [sin(a[0])]
    c = [cos(a[0])]
    for n in range(1, k + 1):
        s.append(_jscale(1.0 / n, _dconv(a, c, n)))
        c.append(_jscale(-1.0 / n, _dconv(a, s, n)))
    return s, c


sin = _def(
    "sin",
    np.sin,
    vjp_arg=lambda i, g, ans, vals, kw: mul(g, cos(vals[0])),
    jet_rule=lambda k, a: _sin_cos_series(k, a)[0],
)

cos = _def(
    "cos",
    np.cos,
    vjp_arg=lambda i, g, ans, vals, kw: neg(mul(g, sin(vals[0]))),
    jet_rule=lambda k, a: _sin_cos_series(k, a)[1],
)


def _sinh_cosh_series(k, a):
    s = [sinh(a[0])]
    c = [cosh(a[0])]
    for n in range(1, k + 1):
        s.append(_jscale(1.0 / n, _dconv(a, c, n)))
        c.append(_jscale(1.0 / n, _dconv(a, s, n)))
    return s, c


sinh = _def(
    "sinh",
    np.sinh,
    vjp_arg=lambda i, g, ans, vals, kw: mul(g, cosh(vals[0])),
    jet_rule=lambda k, a: _sinh_cosh_series(k, a)[0],
)

cosh = _def(
    "cosh",
    np.cosh,
    vjp_arg=lambda i, g, ans, vals, kw: mul(g, sinh(vals[0])),
    jet_rule=lambda k, a: _sinh_cosh_series(k, a)[1],
)


def _tanh_jet(k, a):
    b = [tanh(a[0])]
    w = [sub(1.0, square(b[0]))]
    for n in range(1, k + 1):
        b.append(_jscale(1.0 / n, _dconv(a, w, n)))
        acc = ZERO
        for m in range(n + 1):
            if is_zero(b[m]) or is_zero(b[n - m]):
                continue
            acc = _jadd(acc, mul(b[m], b[n - m]))
        w.append(_jneg(acc))
    return b


def _tanh_vjp(i, g, ans, vals, kw):
    return mul(g, sub(1.0, square(ans)))


tanh = _def("tanh", np.tanh, vjp_arg=_tanh_vjp, jet_rule=_tanh_jet)


def _sigmoid_impl(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _sigmoid_series(k, a):
    s = [sigmoid(a[0])]
    one_minus_s0 = sub(1.0, s[0])
    w = [mul(s[0], one_minus_s0)]
    for n in range(1, k + 1):
        s.append(_jscale(1.0 / n, _dconv(a, w, n)))
        acc = _jmul_safe(s[n], one_minus_s0)
        for m in range(n):
            if is_zero(s[m]) or is_zero(s[n - m]):
                continue
            acc = _jsub(acc, mul(s[m], s[n - m]))
        w.append(acc)
    return s


def _jmul_safe(x, y):
    if is_zero(x) or is_zero(y):
        return ZERO
    return mul(x, y)


sigmoid = _def(
    "sigmoid",
    _sigmoid_impl,
    vjp_arg=lambda i, g, ans, vals, kw: mul(g, mul(ans, sub(1.0, ans))),
    jet_rule=_sigmoid_series,
)


def _softplus_impl(x):
    return np.logaddexp(0.0, x)


def _softplus_jet(k, a):
    s = _sigmoid_series(k - 1, a) if k >= 1 else []
    out = [softplus(a[0])]
    for n in range(1, k + 1):
        out.append(_jscale(1.0 / n, _dconv(a, s, n)))
    return out


softplus = _def(
    "softplus",
    _softplus_impl,
    vjp_arg=lambda i, g, ans, vals, kw: mul(g, sigmoid(vals[0])),
    jet_rule=_softplus_jet,
)

# --- piecewise-linear, with the fixed at-the-kink convention: slope 0 at 0 ---


def _relu_mask(x):
    return (value_of(x) > 0.0).astype(np.float64)


def _relu_jet(k, a):
    mask = _relu_mask(a[0])
    out = [relu(a[0])]
    for n in range(1, k + 1):
        out.append(ZERO if is_zero(a[n]) else mul(mask, a[n]))
    return out


relu = _def(
    "relu",
    lambda x: np.maximum(x, 0.0),
    vjp_arg=lambda i, g, ans, vals, kw: mul(g, _relu_mask(vals[0])),
    jet_rule=_relu_jet,
)


def _abs_jet(k, a):
    sgn = np.sign(value_of(a[0]))
    out = [abs_(a[0])]
    for n in range(1, k + 1):
        out.append(ZERO if is_zero(a[n]) else mul(sgn, a[n]))
    return out


abs_ = _def(
    "abs",
    np.abs,
    vjp_arg=lambda i, g, ans, vals, kw: mul(g, np.sign(value_of(vals[0]))),
    jet_rule=_abs_jet,
)

# --- reductions ---


def _sum_impl(x, *, axis=None, keepdims=False):
    return np.sum(x, axis=axis, keepdims=keepdims)


def _sum_vjp(i, g, ans, vals, kw):
    return _expand_reduced(g, shape_of(vals[0]), kw.get("axis"), kw.get("keepdims", False))


sum_ = _def(
    "sum",
    _sum_impl,
    vjp_arg=_sum_vjp,
    jet_rule=_linear_unary_jet(lambda c, **kw: sum_(c, **kw)),
)


def _reduced_count(shape, axis):
    axes = _normalize_axes(axis, len(shape))
    n = 1
    for a in axes:
        n *= shape[a]
    return n


def _mean_impl(x, *, axis=None, keepdims=False):
    return np.mean(x, axis=axis, keepdims=keepdims)


def _mean_vjp(i, g, ans, vals, kw):
    in_shape = shape_of(vals[0])
    n = _reduced_count(in_shape, kw.get("axis"))
    expanded = _expand_reduced(g, in_shape, kw.get("axis"), kw.get("keepdims", False))
    return mul(1.0 / n, expanded)


def _mean_jet_entry(c, **kw):
    # A ZERO coefficient of a mean is still ZERO; handled by the wrapper.
    return mean(c, **kw)


mean = _def(
    "mean",
    _mean_impl,
    vjp_arg=_mean_vjp,
    jet_rule=_linear_unary_jet(_mean_jet_entry),
)

# --- structural ---


def _concat_impl(xs, *, axis=-1):
    return np.concatenate(xs, axis=axis)


def _concat_vjp(i, g, ans, vals, kw):
    axis = kw.get("axis", -1)
    xs = vals[0]
    start = sum(shape_of(x)[axis] for x in xs[:i])
    size = shape_of(xs[i])[axis]
    return slice_(g, start=start, stop=start + size, axis=axis)


def _concat_jet(k, xs, *, axis=-1):
    out = []
    for n in range(k + 1):
        coeffs_n = [x[n] for x in xs]
        if all(is_zero(c) for c in coeffs_n):
            out.append(ZERO)
            continue
        coeffs_n = [_materialize(c, x[0]) for c, x in zip(coeffs_n, xs)]
        out.append(concat(coeffs_n, axis=axis))
    return out


concat = _def("concat", _concat_impl, vjp_arg=_concat_vjp, jet_rule=_concat_jet)


def _slice_impl(x, *, start, stop, axis=-1):
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    return x[tuple(index)]


def _slice_vjp(i, g, ans, vals, kw):
    x_shape = list(shape_of(vals[0]))
    axis = kw.get("axis", -1) % len(x_shape)
    start, stop = kw["start"], kw["stop"]
    pieces = []
    if start > 0:
        before = list(x_shape)
        before[axis] = start
        pieces.append(np.zeros(before))
    pieces.append(g)
    if stop < x_shape[axis]:
        after = list(x_shape)
        after[axis] = x_shape[axis] - stop
        pieces.append(np.zeros(after))
    if len(pieces) == 1:
        return g
    return concat(pieces, axis=axis)


slice_ = _def(
    "slice",
    _slice_impl,
    vjp_arg=_slice_vjp,
    jet_rule=_linear_unary_jet(lambda c, **kw: slice_(c, **kw)),
)


def _reshape_impl(x, *, shape):
    return np.reshape(x, shape)


def _reshape_jet(k, a, *, shape):
    primal_shape = shape_of(a[0])
    out = []
    for c in a:
        if is_zero(c):
            out.append(ZERO)
        else:
            if shape_of(c) != primal_shape:
                c = broadcast_to(c, shape=primal_shape)
            out.append(reshape(c, shape=shape))
    return out


reshape = _def(
    "reshape",
    _reshape_impl,
    vjp_arg=lambda i, g, ans, vals, kw: reshape(g, shape=shape_of(vals[0])),
    jet_rule=_reshape_jet,
)


def _broadcast_to_impl(x, *, shape):
    return np.broadcast_to(x, shape)


broadcast_to = _def(
    "broadcast_to",
    _broadcast_to_impl,
    vjp_arg=lambda i, g, ans, vals, kw: unbroadcast(g, shape_of(vals[0])),
    jet_rule=_linear_unary_jet(lambda c, **kw: broadcast_to(c, **kw)),
)


def _swap_last2_impl(x):
    return np.swapaxes(x, -1, -2)


swap_last2 = _def(
    "swap_last2",
    _swap_last2_impl,
    vjp_arg=lambda i, g, ans, vals, kw: swap_last2(g),
    jet_rule=_linear_unary_jet(lambda c, **kw: swap_last2(c)),
)


def _take_impl(x, *, indices):
    return x[np.asarray(indices, dtype=np.intp)]


def _take_vjp(i, g, ans, vals, kw):
    return scatter_add(g, indices=kw["indices"], shape=shape_of(vals[0]))


take = _def(
    "take",
    _take_impl,
    vjp_arg=_take_vjp,
    jet_rule=_linear_unary_jet(lambda c, **kw: take(c, **kw)),
)


def _scatter_add_impl(src, *, indices, shape):
    out = np.zeros(shape, dtype=np.float64)
    np.add.at(out, np.asarray(indices, dtype=np.intp), src)
    return out


scatter_add = _def(
    "scatter_add",
    _scatter_add_impl,
    vjp_arg=lambda i, g, ans, vals, kw: take(g, indices=kw["indices"]),
    jet_rule=_linear_unary_jet(lambda c, **kw: scatter_add(c, **kw)),
)

# ---------------------------------------------------------------------------
# composites and lookup
# ---------------------------------------------------------------------------


def swish(x):
    """x * sigmoid(x), the default smooth activation."""
    return mul(x, sigmoid(x))


ACTIVATIONS = {
    "swish": swish,
    "softplus": softplus,
    "relu": relu,
    "tanh": tanh,
    "identity": lambda x: x,
    "sin": sin,
}


def apply_named(name, *args, **kwargs):
    """Apply a primitive or registered composite by name.

    Raises UnsupportedError for anything outside the registered set, which is
    the error surface for config-named operations.
    """
    if name in REGISTRY:
        return REGISTRY[name](*args, **kwargs)
    if name == "swish":
        return swish(*args, **kwargs)
    raise UnsupportedError(f"'{name}' is not a registered primitive")


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise UnsupportedError(f"'{name}' is not a registered activation")
