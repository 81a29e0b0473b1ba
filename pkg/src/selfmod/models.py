"""Contextual models: shared weights modulated by per-environment contexts.

Every model exposes the same surface:

    apply(x, theta, ctx_values) -> predictions
    init_theta(seed) -> ParamVector
    zero_context(env_id) -> Context

apply is written entirely in registered primitives, accepts traced values for
theta and ctx_values, and broadcasts leading batch axes of ctx_values against
x. That single convention is what lets one call evaluate a whole batch of
environments against a whole pool of expansion anchors at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops, shape_of
from .context import FINITE, FUNCTIONAL, Context, zero_context
from .errors import ConfigError
from .nn import MlpSpec, ParamVector, concat_inputs, init_params, mlp_apply
from .ode import IvpSpec, dopri5_solve, rk4_solve


@dataclass(frozen=True)
class ContextSetup:
    """How contexts modulate the model: a plain vector or a context function."""

    kind: str
    dim: int = 0                      # finite: context length
    fn_spec: MlpSpec | None = None    # functional: the context function
    aux_input: str = "x"              # functional: "x" (task input) or "t" (time)

    def __post_init__(self):
        if self.kind == FINITE:
            if self.dim < 0:
                raise ConfigError("finite context dim must be >= 0")
        elif self.kind == FUNCTIONAL:
            if self.fn_spec is None:
                raise ConfigError("functional contexts need fn_spec")
        else:
            raise ConfigError(f"unknown context kind '{self.kind}'")

    @property
    def flat_dim(self):
        return self.dim if self.kind == FINITE else self.fn_spec.param_count()

    @property
    def embed_dim(self):
        return self.dim if self.kind == FINITE else self.fn_spec.out_dim


class _ThetaMixin:
    """Shared flat-theta bookkeeping for models with one or two networks."""

    def _theta_specs(self):
        raise NotImplementedError

    def theta_dim(self):
        return sum(spec.param_count() for _, spec in self._theta_specs())

    def init_theta(self, seed) -> ParamVector:
        parts = []
        manifest = []
        offset = 0
        for i, (prefix, spec) in enumerate(self._theta_specs()):
            pv = init_params(spec, seed + i, mode="standard")
            parts.append(pv.data)
            for name, shape, off in pv.manifest:
                manifest.append((f"{prefix}/{name}", shape, off + offset))
            offset += pv.data.size
        return ParamVector(np.concatenate(parts), tuple(manifest))

    def _theta_slice(self, theta, index):
        specs = self._theta_specs()
        start = sum(spec.param_count() for _, spec in specs[:index])
        stop = start + specs[index][1].param_count()
        total = sum(spec.param_count() for _, spec in specs)
        if start == 0 and stop == total:
            return theta
        return ops.slice_(theta, start=start, stop=stop, axis=-1)


def _flat_theta(theta):
    return theta.data if isinstance(theta, ParamVector) else theta


class ContextualRegressor(_ThetaMixin):
    """Static mapping x -> y, with the context joined to the input rows.

    Finite contexts are concatenated directly (optionally through a small
    embedding network whose weights live in theta; off by default). Functional
    contexts evaluate their context function on x itself, row by row.
    """

    def __init__(self, main_spec: MlpSpec, context: ContextSetup,
                 pre_spec: MlpSpec | None = None):
        if context.kind == FUNCTIONAL and context.aux_input != "x":
            raise ConfigError("a static regressor binds functional contexts to x")
        if pre_spec is not None and context.kind != FINITE:
            raise ConfigError("the embedding network applies to finite contexts only")
        embed = pre_spec.out_dim if pre_spec is not None else context.embed_dim
        self.x_dim = main_spec.in_dim - embed
        if self.x_dim < 1:
            raise ConfigError(
                f"main input width {main_spec.in_dim} leaves no room for x "
                f"next to a {embed}-wide context embedding"
            )
        self.main_spec = main_spec
        self.context = context
        self.pre_spec = pre_spec

    def _theta_specs(self):
        specs = [("main", self.main_spec)]
        if self.pre_spec is not None:
            specs.append(("embed", self.pre_spec))
        return specs

    def zero_context(self, env_id) -> Context:
        if self.context.kind == FINITE:
            return zero_context(env_id, dim=self.context.dim)
        return zero_context(env_id, spec=self.context.fn_spec, aux_input="x")

    def apply(self, x, theta, ctx_values):
        theta = _flat_theta(theta)
        per_row = False
        if self.context.kind == FINITE:
            embed = ctx_values
            if self.pre_spec is not None:
                c_shape = shape_of(ctx_values)
                rows = ops.reshape(ctx_values, shape=c_shape[:-1] + (1,) + c_shape[-1:])
                out = mlp_apply(self.pre_spec, self._theta_slice(theta, 1), rows)
                o_shape = shape_of(out)
                embed = ops.reshape(out, shape=o_shape[:-2] + o_shape[-1:])
        else:
            embed = mlp_apply(self.context.fn_spec, ctx_values, x)
            per_row = True
        inp = concat_inputs(x, embed, per_row=per_row)
        return mlp_apply(self.main_spec, self._theta_slice(theta, 0), inp)


def _append_time(x, t):
    """Add t as a trailing input feature on every row of x."""
    shape = shape_of(x)
    t_col = np.full(shape[:-1] + (1,), float(t))
    return ops.concat([x, t_col], axis=-1)


class NeuralDynamics(_ThetaMixin):
    """A learned vector field integrated over a fixed save grid.

    apply maps initial conditions (..., M, D) to trajectories (..., M, T, D).
    Finite contexts enter the field as constant input features; functional
    contexts are evaluated on the current time. include_time additionally
    feeds t itself to the field, for systems whose ground truth is driven.
    """

    def __init__(self, vf_spec: MlpSpec, context: ContextSetup, t_grid,
                 method: str = "rk4", dt: float | None = None,
                 rtol: float = 1e-6, atol: float = 1e-8,
                 include_time: bool = False):
        self.vf_spec = vf_spec
        self.context = context
        self.t_grid = np.asarray(t_grid, dtype=np.float64)
        self.method = method
        self.dt = dt if dt is not None else float(self.t_grid[1] - self.t_grid[0])
        self.rtol = rtol
        self.atol = atol
        self.include_time = include_time
        self.state_dim = vf_spec.out_dim
        expect = self.state_dim + context.embed_dim + (1 if include_time else 0)
        if vf_spec.in_dim != expect:
            raise ConfigError(
                f"vector-field input width {vf_spec.in_dim} != state {self.state_dim} "
                f"+ embedding {context.embed_dim}"
                + (" + 1 time feature" if include_time else "")
            )
        if method not in ("rk4", "dopri5"):
            raise ConfigError(f"unknown integration method '{method}'")

    def _theta_specs(self):
        return [("field", self.vf_spec)]

    def zero_context(self, env_id) -> Context:
        if self.context.kind == FINITE:
            return zero_context(env_id, dim=self.context.dim)
        return zero_context(env_id, spec=self.context.fn_spec, aux_input="t")

    def vector_field(self, t, state, theta, ctx_values):
        feats = state
        if self.include_time:
            feats = _append_time(state, t)
        if self.context.kind == FINITE:
            embed = ctx_values
        else:
            t_in = np.array([[float(t)]])
            out = mlp_apply(self.context.fn_spec, ctx_values, t_in)
            o_shape = shape_of(out)
            embed = ops.reshape(out, shape=o_shape[:-2] + o_shape[-1:])
        inp = concat_inputs(feats, embed)
        return mlp_apply(self.vf_spec, _flat_theta(theta), inp)

    def _ivp(self):
        return IvpSpec(
            vector_field=self.vector_field,
            t_span=(float(self.t_grid[0]), float(self.t_grid[-1])),
            save_times=self.t_grid,
            dt=self.dt,
            rtol=self.rtol,
            atol=self.atol,
        )

    def solve(self, x0, theta, ctx_values):
        solver = rk4_solve if self.method == "rk4" else dopri5_solve
        return solver(self._ivp(), x0, _flat_theta(theta), ctx_values)

    def apply(self, x0, theta, ctx_values):
        return self.solve(x0, theta, ctx_values).states


class ControlledLinearSystem(_ThetaMixin):
    """A linear plant steered by a learned control signal.

    The plant is dstate/dt = state @ A^T + B u(t, x0, ctx); apply returns the
    terminal state after the horizon, which the loss compares to per-task
    targets. The control network sees the initial condition, the time, and
    the context embedding.
    """

    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    B = np.array([[1.0], [0.0]])

    def __init__(self, control_spec: MlpSpec, context: ContextSetup,
                 horizon: float = 1.0, dt: float = 0.05, method: str = "rk4"):
        self.control_spec = control_spec
        self.context = context
        self.horizon = float(horizon)
        self.dt = dt
        self.method = method
        expect = 2 + 1 + context.embed_dim
        if control_spec.in_dim != expect:
            raise ConfigError(
                f"control input width {control_spec.in_dim} != x0 (2) + t (1) "
                f"+ embedding {context.embed_dim}"
            )
        if control_spec.out_dim != 1:
            raise ConfigError("the control signal is scalar")

    def _theta_specs(self):
        return [("control", self.control_spec)]

    def zero_context(self, env_id) -> Context:
        if self.context.kind == FINITE:
            return zero_context(env_id, dim=self.context.dim)
        return zero_context(env_id, spec=self.context.fn_spec, aux_input="t")

    def control(self, t, x0, theta, ctx_values):
        feats = _append_time(x0, t)
        if self.context.kind == FINITE:
            embed = ctx_values
        else:
            t_in = np.array([[float(t)]])
            out = mlp_apply(self.context.fn_spec, ctx_values, t_in)
            o_shape = shape_of(out)
            embed = ops.reshape(out, shape=o_shape[:-2] + o_shape[-1:])
        inp = concat_inputs(feats, embed)
        return mlp_apply(self.control_spec, _flat_theta(theta), inp)

    def apply(self, x0, theta, ctx_values):
        a_t = self.A.T.copy()
        b_t = self.B.T.copy()

        def field(t, state, th, cv):
            u = self.control(t, x0, th, cv)
            return ops.add(ops.matmul(state, a_t), ops.matmul(u, b_t))

        spec = IvpSpec(
            vector_field=field,
            t_span=(0.0, self.horizon),
            save_times=np.array([self.horizon]),
            dt=self.dt,
        )
        solver = rk4_solve if self.method == "rk4" else dopri5_solve
        traj = solver(spec, x0, _flat_theta(theta), ctx_values)
        return traj.terminal()
