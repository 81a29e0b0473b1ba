"""Per-environment contexts and nearest-neighbour pool selection.

A context is the environment-specific knob the shared model is modulated by:
either a finite vector that gets concatenated to the input, or the flattened
weights of a small context function evaluated on an auxiliary input (time for
dynamical tasks, the task input for static ones). Both kinds share one flat
representation so Taylor expansion in context space is uniform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import tensor
from .errors import ConfigError, InputError, KindError
from .nn import MlpSpec, mlp_apply

FINITE = "finite"
FUNCTIONAL = "functional"


@dataclass
class Context:
    """Flat modulation values for one environment.

    kind "finite": values are the context vector itself.
    kind "functional": values are the flat weights of spec, a context function
    evaluated on an auxiliary input named by aux_input ("t" or "x").
    """

    kind: str
    values: np.ndarray
    env_id: int
    spec: MlpSpec | None = None
    aux_input: str = "x"

    def __post_init__(self):
        if self.kind not in (FINITE, FUNCTIONAL):
            raise KindError(f"unknown context kind '{self.kind}'")
        self.values = tensor(self.values).reshape(-1)
        if self.kind == FUNCTIONAL:
            if self.spec is None:
                raise ConfigError("functional contexts need the context-function spec")
            if self.values.size != self.spec.param_count():
                raise KindError(
                    f"functional context has {self.values.size} values, "
                    f"spec needs {self.spec.param_count()}"
                )

    @property
    def dim(self):
        return self.values.size

    def zeros_like(self, env_id=None):
        return Context(
            kind=self.kind,
            values=np.zeros_like(self.values),
            env_id=self.env_id if env_id is None else env_id,
            spec=self.spec,
            aux_input=self.aux_input,
        )


def zero_context(env_id, *, dim=None, spec=None, aux_input="x"):
    """All-zero context, finite when dim is given, functional when spec is."""
    if (dim is None) == (spec is None):
        raise ConfigError("give exactly one of dim or spec")
    if dim is not None:
        return Context(kind=FINITE, values=np.zeros(dim), env_id=env_id)
    return Context(
        kind=FUNCTIONAL,
        values=np.zeros(spec.param_count()),
        env_id=env_id,
        spec=spec,
        aux_input=aux_input,
    )


@dataclass
class ContextPool:
    """The contexts candidate expansions are anchored at, in selection order."""

    members: list = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ConfigError("a pool needs at least one member")

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def stacked_values(self):
        return np.stack([m.values for m in self.members])


def _check_same_kind(a: Context, b: Context):
    if a.kind != b.kind or a.dim != b.dim:
        raise KindError(
            f"contexts disagree: {a.kind}/{a.dim} vs {b.kind}/{b.dim}"
        )


def l1_distance(a: Context, b: Context) -> float:
    """Sum of absolute coordinate differences in the flat representation."""
    _check_same_kind(a, b)
    return float(np.sum(np.abs(a.values - b.values)))


def select_pool(target: Context, all_contexts, p: int) -> ContextPool:
    """The p contexts nearest the target, distance ties broken by env_id.

    The target's own context competes like any other (its distance is zero),
    so at an all-zero start every pool is just the p lowest env ids.
    """
    if p < 1:
        raise ConfigError(f"pool size must be >= 1, got {p}")
    if p > len(all_contexts):
        raise ConfigError(
            f"pool size {p} exceeds the {len(all_contexts)} available contexts"
        )
    ranked = sorted(
        all_contexts, key=lambda c: (l1_distance(target, c), c.env_id)
    )
    return ContextPool(members=list(ranked[:p]))


def context_embedding(ctx, x_aux=None):
    """What actually reaches the main network for this context.

    Finite contexts pass through unchanged. Functional contexts evaluate their
    context function on the auxiliary input, which must be provided with a
    trailing feature axis.
    """
    if isinstance(ctx, Context):
        kind, values, spec = ctx.kind, ctx.values, ctx.spec
    else:
        raise InputError("context_embedding expects a Context")
    if kind == FINITE:
        return values
    if x_aux is None:
        raise InputError(
            f"functional context needs its auxiliary input '{ctx.aux_input}'"
        )
    return mlp_apply(spec, values, x_aux)
