"""Per-environment candidate losses and their stochastic estimator.

The per-environment loss averages a base loss over every datapoint and every
candidate prediction from the environment's pool. The stochastic estimator
evaluates only a nearest-first batch of environments per step: a seed
environment drawn uniformly plus its L1-nearest peers in context space. The
whole batch is evaluated in one traced program over a stacked context tensor,
so one pullback yields the shared-weight gradient and every batch member's
context gradient, including gradients received through pool membership.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import forward_reverse, ops, shape_of
from .context import Context, ContextPool, l1_distance, select_pool
from .errors import ConfigError, DataError, ShapeError
from .nn import ParamVector
from .taylor import candidate_predictions


@dataclass
class LossConfig:
    base: str = "mse"
    k: int = 0
    p: int = 1
    batch_size: int = 1
    beta: float = 0.0

    def __post_init__(self):
        if self.base not in ("mse", "mae"):
            raise ConfigError(f"unknown base loss '{self.base}'")
        if self.k < 0 or self.p < 1 or self.batch_size < 1:
            raise ConfigError("k >= 0, p >= 1, batch size >= 1 required")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")


@dataclass
class Batch:
    env_ids: list
    seed_env: int

    def __post_init__(self):
        if len(set(self.env_ids)) != len(self.env_ids):
            raise ConfigError("batch env ids must be distinct")
        if self.seed_env not in self.env_ids:
            raise ConfigError("seed env must be part of the batch")

    def __len__(self):
        return len(self.env_ids)


def _base_errors(diff, base):
    return ops.square(diff) if base == "mse" else ops.abs_(diff)


def _flat(theta):
    return theta.data if isinstance(theta, ParamVector) else theta


def env_loss(model, theta, ctx: Context, pool: ContextPool, data, cfg: LossConfig):
    """Mean over datapoints of the mean over candidates of the base loss."""
    x, y = data
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] == 0:
        raise DataError("environment has no datapoints")
    preds = candidate_predictions(
        model, _flat(theta), x, ctx.values, pool.stacked_values(), cfg.k
    )
    errs = _base_errors(ops.sub(preds, y), cfg.base)
    out = ops.mean(errs)
    return float(out) if isinstance(out, np.ndarray) else out


def mean_loss(model, theta, all_ctx, datasets, cfg: LossConfig, pools=None):
    """Arithmetic mean of env_loss over every environment.

    Pools default to nearest-neighbour selection over the full context set;
    pass a dict env_id -> ContextPool to pin them.
    """
    if len(all_ctx) < 1:
        raise DataError("need at least one environment")
    if pools is None:
        pools = {c.env_id: select_pool(c, list(all_ctx), cfg.p) for c in all_ctx}
    total = None
    for c in all_ctx:
        term = env_loss(model, theta, c, pools[c.env_id], datasets[c.env_id], cfg)
        total = term if total is None else ops.add(total, term)
    out = ops.mul(1.0 / len(all_ctx), total)
    return float(out) if isinstance(out, (np.ndarray, float)) else out


def sample_batch(all_ctx, batch_size, rng) -> Batch:
    """Uniform seed environment, then its L1-nearest peers, ties by env_id."""
    n = len(all_ctx)
    if batch_size > n:
        raise ConfigError(f"batch size {batch_size} exceeds {n} environments")
    i_star = int(rng.integers(n))
    seed_ctx = all_ctx[i_star]
    others = [c for j, c in enumerate(all_ctx) if j != i_star]
    ranked = sorted(others, key=lambda c: (l1_distance(seed_ctx, c), c.env_id))
    env_ids = [seed_ctx.env_id] + [c.env_id for c in ranked[: batch_size - 1]]
    return Batch(env_ids=env_ids, seed_env=seed_ctx.env_id)


def stack_pairs(datasets, env_ids):
    """Stack per-environment (x, y) pairs into (E, ...) arrays."""
    xs, ys = [], []
    for e in env_ids:
        x, y = datasets[e]
        xs.append(np.asarray(x, dtype=np.float64))
        ys.append(np.asarray(y, dtype=np.float64))
    try:
        return np.stack(xs), np.stack(ys)
    except ValueError as exc:
        raise DataError(f"environments are not homogeneous: {exc}") from exc


def batch_loss_program(model, cfg: LossConfig, xs, ys, env_rows, pool_rows):
    """Build per_env(theta, ctx_tensor) -> (E,) losses for a stacked batch.

    env_rows and pool_rows index rows of the ctx_tensor the program will be
    called with; pool members receive gradients through their anchor role.
    """
    rows = np.asarray(env_rows, dtype=np.intp)
    pool_rows = np.asarray(pool_rows, dtype=np.intp)
    xs_b = xs[:, None]
    ys_b = ys[:, None]

    def per_env(theta, ctx_tensor):
        tgt = ops.take(ctx_tensor, indices=rows)
        tshape = shape_of(tgt)
        tgt = ops.reshape(tgt, shape=(tshape[0], 1, tshape[1]))
        anchors = ops.take(ctx_tensor, indices=pool_rows)
        preds = candidate_predictions(model, theta, xs_b, tgt, anchors, cfg.k)
        errs = _base_errors(ops.sub(preds, ys_b), cfg.base)
        ndim = len(shape_of(errs))
        return ops.mean(errs, axis=tuple(range(1, ndim)))

    return per_env


@dataclass
class StochasticGrads:
    loss: float
    theta: np.ndarray | None = None
    contexts: dict = field(default_factory=dict)


def local_pools(all_ctx, batch: Batch, p):
    """Nearest-neighbour pools drawn from the batch members only."""
    by_id = {c.env_id: c for c in all_ctx}
    members = [by_id[e] for e in batch.env_ids]
    return {e: select_pool(by_id[e], members, p) for e in batch.env_ids}


def stochastic_grad(model, theta, all_ctx, datasets, batch: Batch,
                    cfg: LossConfig, wrt="both", pools=None) -> StochasticGrads:
    """Mean of per-environment gradients over the batch.

    Returns the shared-weight gradient and context gradients for batch
    members. Pools default to nearest-first selection within the batch;
    explicit pools may reference any environment (frozen-pool evaluation).
    """
    if wrt not in ("theta", "contexts", "both"):
        raise ConfigError(f"unknown wrt '{wrt}'")
    id_to_row = {c.env_id: i for i, c in enumerate(all_ctx)}
    if pools is None:
        pools = local_pools(all_ctx, batch, cfg.p)
    rows = [id_to_row[e] for e in batch.env_ids]
    pool_rows = [
        [id_to_row[m.env_id] for m in pools[e]] for e in batch.env_ids
    ]
    xs, ys = stack_pairs(datasets, batch.env_ids)
    per_env = batch_loss_program(model, cfg, xs, ys, rows, pool_rows)
    ctx_tensor = np.stack([c.values for c in all_ctx])

    def objective(th, ct):
        return ops.mean(per_env(th, ct))

    value, pullback = forward_reverse(objective, _flat(theta), ctx_tensor)
    g_theta, g_ctx = pullback(1.0)
    result = StochasticGrads(loss=float(value))
    if wrt in ("theta", "both"):
        result.theta = g_theta
    if wrt in ("contexts", "both"):
        result.contexts = {e: g_ctx[id_to_row[e]].copy() for e in batch.env_ids}
    return result


def proximal_penalty(current, anchor, beta):
    """(beta/2) * squared distance to the previous outer iterate."""
    if beta < 0:
        raise ConfigError("beta must be >= 0")
    current_flat = _flat(current)
    anchor_flat = _flat(anchor)
    if shape_of(current_flat) != shape_of(anchor_flat):
        raise ShapeError(
            f"proximal operands disagree: {shape_of(current_flat)} vs "
            f"{shape_of(anchor_flat)}"
        )
    if beta == 0.0:
        return 0.0
    out = ops.mul(beta / 2.0, ops.sum_(ops.square(ops.sub(current_flat, anchor_flat))))
    return out
