"""Differentiable time integration.

Both solvers run their state arithmetic through the generic primitives, so
gradients flow by backpropagation through the solver internals
(discretize-then-optimize) and jets propagate through trajectories. Step-size
decisions in the adaptive solver read detached values only: step sizes are
constants of the backward pass.

States may carry arbitrary leading batch axes; independent trajectories
integrate in one vectorized pass. The trailing layout of Trajectory.states is
(..., len(times), state_dim).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops, shape_of, value_of
from .autodiff.core import as_value
from .errors import (
    BlowupError,
    ConfigError,
    DataError,
    NonFiniteError,
    StiffnessError,
)


@dataclass
class IvpSpec:
    """An initial value problem: field, horizon, step control, save grid."""

    vector_field: callable  # (t, state, theta, ctx) -> dstate/dt
    t_span: tuple
    save_times: np.ndarray
    dt: float | None = None
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 100_000

    def __post_init__(self):
        t0, t1 = self.t_span
        if not t1 > t0:
            raise ConfigError(f"t_span must increase, got {self.t_span}")
        self.save_times = np.asarray(self.save_times, dtype=np.float64)
        if self.save_times.size == 0:
            raise ConfigError("save_times is empty")
        if np.any(np.diff(self.save_times) <= 0):
            raise ConfigError("save_times must be strictly increasing")
        if self.save_times[0] < t0 - 1e-12 or self.save_times[-1] > t1 + 1e-12:
            raise ConfigError("save_times must lie within t_span")


@dataclass
class Trajectory:
    times: np.ndarray
    states: object  # (..., len(times), state_dim), possibly traced

    def terminal(self):
        n = len(self.times)
        sliced = ops.slice_(self.states, start=n - 1, stop=n, axis=-2)
        shape = shape_of(sliced)
        return ops.reshape(sliced, shape=shape[:-2] + shape[-1:])


def _stack_time(states):
    """Stack per-save states (..., D) into (..., T, D).

    States saved early in an integration may have narrower batch shapes than
    later ones (broadcasting happens as context enters the field), so
    everything is broadcast to the common shape first.
    """
    common = np.broadcast_shapes(*(shape_of(s) for s in states))
    expanded = []
    for s in states:
        if shape_of(s) != common:
            s = ops.broadcast_to(s, shape=common)
        expanded.append(ops.reshape(s, shape=common[:-1] + (1,) + common[-1:]))
    if len(expanded) == 1:
        return expanded[0]
    return ops.concat(expanded, axis=-2)


def _rk4_step(f, t, y, h, theta, ctx):
    k1 = f(t, y, theta, ctx)
    k2 = f(t + 0.5 * h, ops.add(y, ops.mul(0.5 * h, k1)), theta, ctx)
    k3 = f(t + 0.5 * h, ops.add(y, ops.mul(0.5 * h, k2)), theta, ctx)
    k4 = f(t + h, ops.add(y, ops.mul(h, k3)), theta, ctx)
    incr = ops.add(ops.add(k1, ops.mul(2.0, k2)), ops.add(ops.mul(2.0, k3), k4))
    return ops.add(y, ops.mul(h / 6.0, incr))


def rk4_solve(spec: IvpSpec, x0, theta=None, ctx=None) -> Trajectory:
    """Classical fixed-step fourth-order integration on the save grid.

    The step dt must divide every save interval. The first save point may be
    t0 itself, in which case the initial state is emitted directly.
    """
    if spec.dt is None or spec.dt <= 0:
        raise ConfigError("rk4 needs a positive dt")
    h = float(spec.dt)
    t0 = float(spec.t_span[0])
    y = as_value(x0)
    f = spec.vector_field
    saved = []
    t = t0
    try:
        for s in spec.save_times:
            span = float(s) - t
            if span < -1e-12:
                raise ConfigError("save grid runs backwards")
            n = int(round(span / h))
            if abs(n * h - span) > 1e-9 * max(1.0, abs(span)):
                raise ConfigError(
                    f"dt={h} does not divide the save interval of length {span}"
                )
            for _ in range(n):
                y = _rk4_step(f, t, y, h, theta, ctx)
                t += h
            t = float(s)
            saved.append(y)
    except NonFiniteError as e:
        raise BlowupError(t, f"rk4 state blew up near t={t} ({e})") from e
    return Trajectory(times=spec.save_times.copy(), states=_stack_time(saved))


# Dormand-Prince 5(4) tableau.
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (
    5179 / 57600,
    0.0,
    7571 / 16695,
    393 / 640,
    -92097 / 339200,
    187 / 2100,
    1 / 40,
)
_DP_ERR = tuple(b5 - b4 for b5, b4 in zip(_DP_B5, _DP_B4))
# Midpoint weights of the quartic dense-output interpolant.
_DP_MID = (
    6025192743 / 30085553152 / 2,
    0.0,
    51252292925 / 65400821598 / 2,
    -2691868925 / 45128329728 / 2,
    187940372067 / 1594534317056 / 2,
    -1776094331 / 19743644256 / 2,
    11237099 / 235043384 / 2,
)


def _weighted_sum(h, coeffs, ks):
    acc = None
    for c, k in zip(coeffs, ks):
        if c == 0.0:
            continue
        term = ops.mul(h * c, k)
        acc = term if acc is None else ops.add(acc, term)
    return acc


def _error_norm(err, y0, y1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(value_of(y0)), np.abs(value_of(y1)))
    ratio = value_of(err) / scale
    return float(np.sqrt(np.mean(np.square(ratio))))


def _interp_coeffs(y0, y1, y_mid, f0, f1, h):
    a = ops.add(
        ops.sub(ops.mul(2.0 * h, ops.sub(f1, f0)), ops.mul(8.0, ops.add(y0, y1))),
        ops.mul(16.0, y_mid),
    )
    b = ops.sub(
        ops.add(ops.mul(h, ops.sub(ops.mul(5.0, f0), ops.mul(3.0, f1))),
                ops.add(ops.mul(18.0, y0), ops.mul(14.0, y1))),
        ops.mul(32.0, y_mid),
    )
    c = ops.add(
        ops.sub(
            ops.mul(h, ops.sub(f1, ops.mul(4.0, f0))),
            ops.add(ops.mul(11.0, y0), ops.mul(5.0, y1)),
        ),
        ops.mul(16.0, y_mid),
    )
    d = ops.mul(h, f0)
    return a, b, c, d, y0


def _interp_eval(coeffs, sigma):
    a, b, c, d, e = coeffs
    out = e
    for w, coef in ((sigma, d), (sigma**2, c), (sigma**3, b), (sigma**4, a)):
        out = ops.add(out, ops.mul(w, coef))
    return out


def _initial_step(f, t0, y0, f0, rtol, atol, t_max):
    y0_v, f0_v = value_of(y0), value_of(f0)
    scale = atol + rtol * np.abs(y0_v)
    d0 = np.sqrt(np.mean(np.square(y0_v / scale)))
    d1 = np.sqrt(np.mean(np.square(f0_v / scale)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    try:
        f1 = value_of(f(t0 + h0, y0_v + h0 * f0_v))
        d2 = np.sqrt(np.mean(np.square((f1 - f0_v) / scale))) / h0
    except NonFiniteError:
        d2 = np.inf
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, t_max - t0)


def dopri5_solve(spec: IvpSpec, x0, theta=None, ctx=None) -> Trajectory:
    """Adaptive 5(4) embedded pair with PI step control and dense output."""
    if spec.rtol <= 0 or spec.atol <= 0:
        raise ConfigError("rtol and atol must be positive")
    rtol, atol = spec.rtol, spec.atol
    t0, t1 = float(spec.t_span[0]), float(spec.t_span[1])
    field = spec.vector_field

    def f(t, y, _theta=None, _ctx=None):
        return field(t, y, theta, ctx)

    y = as_value(x0)
    t = t0
    try:
        f0 = f(t, y)
    except NonFiniteError as e:
        raise BlowupError(t, str(e)) from e
    h = _initial_step(f, t0, y, f0, rtol, atol, t1)

    save_times = spec.save_times
    saved = []
    si = 0
    if abs(save_times[0] - t0) <= 1e-12:
        saved.append(y)
        si = 1

    err_prev = 1e-4
    safety, fac_min, fac_max = 0.9, 0.2, 5.0
    alpha, beta_pi = 0.7 / 5.0, 0.4 / 5.0
    steps = 0
    while t < t1 - 1e-12:
        if steps >= spec.max_steps:
            raise StiffnessError(f"exceeded {spec.max_steps} steps at t={t}")
        if h < 1e-13 * max(1.0, abs(t)):
            raise StiffnessError(f"step size underflow at t={t}")
        h = min(h, t1 - t)
        steps += 1
        failed = False
        try:
            ks = [f0]
            for i in range(1, 7):
                yi = y
                for aij, kj in zip(_DP_A[i], ks):
                    if aij == 0.0:
                        continue
                    yi = ops.add(yi, ops.mul(h * aij, kj))
                ks.append(f(t + _DP_C[i] * h, yi))
            y_new = ops.add(y, _weighted_sum(h, _DP_B5, ks))
            err = _weighted_sum(h, _DP_ERR, ks)
        except NonFiniteError:
            failed = True
        if failed:
            err_norm = np.inf
        else:
            err_norm = _error_norm(err, y, y_new, rtol, atol)
        if err_norm <= 1.0:
            assert err_norm <= 1.0  # accepted-step error stays within tolerance
            y_mid = ops.add(y, _weighted_sum(h, _DP_MID, ks))
            interp = _interp_coeffs(y, y_new, y_mid, ks[0], ks[6], h)
            t_new = t + h
            while si < len(save_times) and save_times[si] <= t_new + 1e-12:
                sigma = (save_times[si] - t) / h
                saved.append(_interp_eval(interp, float(np.clip(sigma, 0.0, 1.0))))
                si += 1
            t = t_new
            y = y_new
            f0 = ks[6]
            factor = safety * err_norm ** (-alpha) * err_prev**beta_pi
            err_prev = max(err_norm, 1e-4)
            h = h * min(fac_max, max(fac_min, factor))
        else:
            if np.isfinite(err_norm):
                factor = safety * err_norm ** (-0.2)
                h = h * min(1.0, max(fac_min, factor))
            else:
                h = h * fac_min
    if si < len(save_times):
        raise BlowupError(t, "integration ended before the save grid was covered")
    return Trajectory(times=save_times.copy(), states=_stack_time(saved))


def trajectory_loss(pred: Trajectory, target: Trajectory):
    """Mean squared error over every (time, dim) entry of matching grids."""
    if len(pred.times) != len(target.times) or np.max(
        np.abs(pred.times - target.times)
    ) > 1e-9:
        raise DataError("trajectory grids do not match")
    diff = ops.sub(pred.states, target.states)
    out = ops.mean(ops.square(diff))
    return float(out) if isinstance(out, np.ndarray) else out
