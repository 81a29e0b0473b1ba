"""Candidate predictions: Taylor expansion of the model in context space.

For a target context and a pool of anchor contexts, each anchor yields one
candidate prediction: the model expanded to order k around the anchor and
evaluated at the target. Order 0 is the model at the anchor; the expansion is
taken over the flat context slice only, with inputs and shared weights held
constant. The jet machinery returns coefficients that already include the
inverse factorials, so a candidate is just the coefficient sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import jet_propagate, ops, shape_of, value_of
from .context import Context, ContextPool, _check_same_kind
from .errors import ConfigError


def candidate_predictions(model, theta, x, target_values, anchor_values, k):
    """Batched candidate core: anchors may carry leading batch axes.

    target_values broadcasts against anchor_values; the model is expanded
    around the anchors and evaluated at the target. Returns predictions with
    the anchors' batch axes prepended to the model's output shape.
    """
    if k < 0:
        raise ConfigError(f"Taylor order must be >= 0, got {k}")
    if k == 0:
        return model.apply(x, theta, anchor_values)
    series = [ops.sub(target_values, anchor_values)]
    zero = np.zeros(shape_of(series[0]))
    series.extend([zero] * (k - 1))
    jet = jet_propagate(
        lambda c: model.apply(x, theta, c), anchor_values, series
    )
    pred = jet.coeffs[0]
    for c in jet.coeffs[1:]:
        pred = ops.add(pred, c)
    return pred


def candidate_predict(model, theta, x, target_ctx: Context, anchor_ctx: Context, k: int):
    """One candidate: expand around anchor_ctx, evaluate at target_ctx."""
    _check_same_kind(target_ctx, anchor_ctx)
    return candidate_predictions(
        model, theta, x, target_ctx.values, anchor_ctx.values, k
    )


@dataclass
class CandidateSet:
    """One prediction per pool member, in pool order."""

    predictions: list
    pool: ContextPool
    order: int

    def __post_init__(self):
        if len(self.predictions) != len(self.pool):
            raise ConfigError(
                f"{len(self.predictions)} predictions for a pool of {len(self.pool)}"
            )


def candidate_set(model, theta, x, target_ctx: Context, pool: ContextPool, k: int) -> CandidateSet:
    """All candidates for one environment, in a single expansion pass."""
    for member in pool:
        _check_same_kind(target_ctx, member)
    anchors = pool.stacked_values()
    preds = candidate_predictions(model, theta, x, target_ctx.values, anchors, k)
    split = [
        ops.reshape(
            ops.slice_(preds, start=j, stop=j + 1, axis=0),
            shape=shape_of(preds)[1:],
        )
        for j in range(len(pool))
    ]
    return CandidateSet(predictions=split, pool=pool, order=k)


def ensemble_stats(cs: CandidateSet):
    """Elementwise mean and population variance across the candidates."""
    stacked = np.stack([value_of(p) for p in cs.predictions])
    return stacked.mean(axis=0), stacked.var(axis=0)
