"""Training regimes over shared weights and per-environment contexts.

Three regimes share the batched loss machinery:

  ncf         proximal alternating minimization: per outer step, a fixed
              number of descent steps on the shared weights against the batch
              loss plus a proximal pull toward the previous outer iterate,
              then the same for the batch contexts at the updated weights.
  ncf_star    joint variant: one simultaneous update of weights and batch
              contexts per outer step, no proximal anchors.
  flashcavia  bi-level: every batch environment resets its context to zero
              and runs H differentiable inner updates on its own support
              loss; the shared weights then take one step against the
              post-inner-loop support losses, with the meta-gradient flowing
              through all H updates.

Batches reduce in ascending env-id order regardless of how they were sampled,
so runs are bit-reproducible and the full-batch stochastic trainer coincides
exactly with a deterministic sweep.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import forward_reverse, ops, value_of
from .context import Context, ContextPool, select_pool
from .errors import ConfigError, NonFiniteError, TrainingAborted
from .loss import (
    Batch,
    LossConfig,
    batch_loss_program,
    proximal_penalty,
    sample_batch,
    stack_pairs,
)
from .nn import ParamVector, write_checkpoint


@dataclass
class TrainerConfig:
    trainer: str = "ncf"
    q_max: int = 100
    inner_steps: int = 10
    H: int = 1
    eta_theta: float = 1e-3
    eta_xi: float = 1e-3
    beta: float = 1e-3
    batch_size: int = 1
    pool_size: int = 1
    taylor_order: int = 0
    base: str = "mse"
    optimizer_theta: str = "adam"
    optimizer_xi: str = "adam"
    inner_optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    schedule_factor: float | None = None
    time_budget: float | None = None

    def __post_init__(self):
        if self.trainer not in ("ncf", "ncf_star", "flashcavia"):
            raise ConfigError(f"unknown trainer '{self.trainer}'")
        if self.eta_theta <= 0 and self.trainer == "flashcavia":
            raise ConfigError("outer learning rate must be positive")
        if min(self.eta_theta, self.eta_xi) < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.H < 0 or self.inner_steps < 1 or self.q_max < 1:
            raise ConfigError("H >= 0, inner_steps >= 1, q_max >= 1 required")
        if self.trainer == "flashcavia" and self.taylor_order > 3:
            raise ConfigError(
                "Taylor order is capped at 3 inside the bi-level trainer"
            )
        for name in (self.optimizer_theta, self.optimizer_xi, self.inner_optimizer):
            if name not in ("adam", "sgd"):
                raise ConfigError(f"unknown optimizer '{name}'")

    def loss_config(self, n_envs):
        return LossConfig(
            base=self.base,
            k=self.taylor_order,
            p=self.pool_size,
            batch_size=min(self.batch_size, n_envs),
            beta=self.beta,
        )


@dataclass
class TrainState:
    theta: ParamVector
    contexts: list
    opt_theta: dict
    opt_xi: dict
    outer_iter: int
    rng: np.random.Generator
    loss_trace: list = field(default_factory=list)
    theta_anchor: np.ndarray | None = None
    ctx_anchor: np.ndarray | None = None

    def snapshot(self):
        return replace(
            self,
            theta=self.theta.copy(),
            contexts=[
                Context(c.kind, c.values.copy(), c.env_id, c.spec, c.aux_input)
                for c in self.contexts
            ],
            opt_theta={k: np.copy(v) for k, v in self.opt_theta.items()},
            opt_xi={k: np.copy(v) for k, v in self.opt_xi.items()},
            loss_trace=list(self.loss_trace),
        )

    def ctx_tensor(self):
        return np.stack([c.values for c in self.contexts])

    def set_ctx_tensor(self, tensor):
        for c, row in zip(self.contexts, tensor):
            c.values = np.array(row)


def init_state(model, n_envs, seed) -> TrainState:
    theta = model.init_theta(seed)
    contexts = [model.zero_context(e) for e in range(n_envs)]
    d = contexts[0].dim
    return TrainState(
        theta=theta,
        contexts=contexts,
        opt_theta={
            "m": np.zeros_like(theta.data),
            "v": np.zeros_like(theta.data),
            "t": np.zeros(()),
        },
        opt_xi={
            "m": np.zeros((n_envs, d)),
            "v": np.zeros((n_envs, d)),
            "t": np.zeros(n_envs),
        },
        outer_iter=0,
        rng=np.random.default_rng(seed),
    )


# ---------------------------------------------------------------------------
# optimizer steps (concrete numpy; the differentiable inner variants are below)
# ---------------------------------------------------------------------------


def adam_step(params, grad, moments, eta, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """One bias-corrected update; returns (new_params, new_moments)."""
    m, v = moments
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * np.square(grad)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return params - eta * m_hat / (np.sqrt(v_hat) + eps), (m, v)


def _update_theta(state, grad, cfg, eta):
    if cfg.optimizer_theta == "sgd":
        state.theta.data = state.theta.data - eta * grad
        return
    t = int(state.opt_theta["t"]) + 1
    new, (m, v) = adam_step(
        state.theta.data,
        grad,
        (state.opt_theta["m"], state.opt_theta["v"]),
        eta,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
        t,
    )
    state.theta.data = new
    state.opt_theta.update(m=m, v=v, t=np.asarray(float(t)))


def _update_ctx_rows(state, rows, grads, cfg, eta):
    """Adam/SGD on selected context rows with per-environment step counts."""
    rows = np.asarray(rows, dtype=np.intp)
    tensor = state.ctx_tensor()
    if cfg.optimizer_xi == "sgd":
        tensor[rows] = tensor[rows] - eta * grads
        state.set_ctx_tensor(tensor)
        return
    o = state.opt_xi
    o["t"][rows] += 1
    t = o["t"][rows][:, None]
    m = cfg.adam_beta1 * o["m"][rows] + (1 - cfg.adam_beta1) * grads
    v = cfg.adam_beta2 * o["v"][rows] + (1 - cfg.adam_beta2) * np.square(grads)
    o["m"][rows] = m
    o["v"][rows] = v
    m_hat = m / (1.0 - cfg.adam_beta1**t)
    v_hat = v / (1.0 - cfg.adam_beta2**t)
    tensor[rows] = tensor[rows] - eta * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    state.set_ctx_tensor(tensor)


def _lr_scale(cfg, q):
    if cfg.schedule_factor is None:
        return 1.0
    scale = 1.0
    if q >= cfg.q_max / 3.0:
        scale *= cfg.schedule_factor
    if q >= 2.0 * cfg.q_max / 3.0:
        scale *= cfg.schedule_factor
    return scale


# ---------------------------------------------------------------------------
# shared batch plumbing
# ---------------------------------------------------------------------------


def _sorted_batch_rows(state, batch):
    id_to_row = {c.env_id: i for i, c in enumerate(state.contexts)}
    env_ids = sorted(batch.env_ids)
    return env_ids, [id_to_row[e] for e in env_ids]


def _build_pools(state, env_ids, p, self_first=False):
    members = [state.contexts[e] for e in env_ids]
    pools = {}
    for e in env_ids:
        target = state.contexts[e]
        if self_first:
            others = [c for c in members if c.env_id != e]
            chosen = [target]
            if p > 1:
                chosen += select_pool(target, others, min(p - 1, len(others))).members
            pools[e] = ContextPool(chosen)
        else:
            pools[e] = select_pool(target, members, p)
    return pools


def _pool_rows(pools, env_ids, id_to_row):
    return [[id_to_row[m.env_id] for m in pools[e]] for e in env_ids]


class _StepContext:
    """Stacked data and loss program for one outer step's batch."""

    def __init__(self, model, state, datasets, cfg, env_ids, self_first_pools=False):
        self.env_ids = env_ids
        id_to_row = {c.env_id: i for i, c in enumerate(state.contexts)}
        self.rows = [id_to_row[e] for e in env_ids]
        lc = cfg.loss_config(len(state.contexts))
        pools = _build_pools(state, env_ids, lc.p, self_first=self_first_pools)
        pool_rows = _pool_rows(pools, env_ids, id_to_row)
        xs, ys = stack_pairs(datasets, env_ids)
        self.per_env = batch_loss_program(model, lc, xs, ys, self.rows, pool_rows)

    def data_loss(self, theta, ctx_tensor):
        return ops.mean(self.per_env(theta, ctx_tensor))


def _check_time(budget, started):
    return budget is not None and (time.monotonic() - started) >= budget


# ---------------------------------------------------------------------------
# trainers
# ---------------------------------------------------------------------------


def train_ncf(model, state, datasets, cfg, metrics_cb=None, checkpoint_path=None):
    """Proximal alternating meta-training (stochastic over batches)."""
    if cfg.trainer != "ncf":
        raise ConfigError("config is not for the ncf trainer")
    started = time.monotonic()
    n = len(state.contexts)
    for q in range(state.outer_iter + 1, cfg.q_max + 1):
        if _check_time(cfg.time_budget, started):
            break
        last_good = state.snapshot()
        scale = _lr_scale(cfg, q)
        try:
            batch = sample_batch(state.contexts, min(cfg.batch_size, n), state.rng)
            env_ids, rows = _sorted_batch_rows(state, batch)
            step = _StepContext(model, state, datasets, cfg, env_ids)
            theta_anchor = state.theta.data.copy()
            ctx_full = state.ctx_tensor()
            ctx_anchor_rows = ctx_full[rows].copy()

            # weights phase: contexts frozen at the previous outer iterate
            for _ in range(cfg.inner_steps):
                def g_obj(th):
                    data = step.data_loss(th, ctx_full)
                    return ops.add(data, proximal_penalty(th, theta_anchor, cfg.beta))

                value, pullback = forward_reverse(g_obj, state.theta.data)
                (grad,) = pullback(1.0)
                _update_theta(state, grad, cfg, cfg.eta_theta * scale)
                _record(state, metrics_cb, value, q, started)

            # context phase: weights frozen at the fresh iterate
            theta_now = state.theta.data
            row_idx = np.asarray(rows, dtype=np.intp)
            for _ in range(cfg.inner_steps):
                ctx_full = state.ctx_tensor()

                def h_obj(ct):
                    data = step.data_loss(theta_now, ct)
                    moved = ops.take(ct, indices=row_idx)
                    return ops.add(data, proximal_penalty(moved, ctx_anchor_rows, cfg.beta))

                value, pullback = forward_reverse(h_obj, ctx_full)
                (grad_full,) = pullback(1.0)
                _update_ctx_rows(state, rows, grad_full[row_idx], cfg, cfg.eta_xi * scale)
                _record(state, metrics_cb, value, q, started)

            state.theta_anchor = state.theta.data.copy()
            state.ctx_anchor = state.ctx_tensor()
            state.outer_iter = q
        except NonFiniteError as e:
            _abort(last_good, checkpoint_path, cfg, e)
    return state


def train_ncf_star(model, state, datasets, cfg, metrics_cb=None, checkpoint_path=None):
    """Joint variant: simultaneous weight and context updates, no anchors."""
    if cfg.trainer != "ncf_star":
        raise ConfigError("config is not for the ncf_star trainer")
    started = time.monotonic()
    n = len(state.contexts)
    for q in range(state.outer_iter + 1, cfg.q_max + 1):
        if _check_time(cfg.time_budget, started):
            break
        last_good = state.snapshot()
        scale = _lr_scale(cfg, q)
        try:
            batch = sample_batch(state.contexts, min(cfg.batch_size, n), state.rng)
            env_ids, rows = _sorted_batch_rows(state, batch)
            step = _StepContext(model, state, datasets, cfg, env_ids)
            ctx_full = state.ctx_tensor()

            value, pullback = forward_reverse(step.data_loss, state.theta.data, ctx_full)
            g_theta, g_ctx = pullback(1.0)
            row_idx = np.asarray(rows, dtype=np.intp)
            _update_theta(state, g_theta, cfg, cfg.eta_theta * scale)
            _update_ctx_rows(state, rows, g_ctx[row_idx], cfg, cfg.eta_xi * scale)
            _record(state, metrics_cb, value, q, started)
            state.outer_iter = q
        except NonFiniteError as e:
            _abort(last_good, checkpoint_path, cfg, e)
    return state


def _inner_updates(per_env, theta, ctx0, cfg, H, eta_xi):
    """Differentiable inner loop: H updates of the stacked contexts.

    The inner objective is the sum of per-environment losses, so with
    single-member pools each context descends its own loss exactly; with
    wider pools the anchors feel their pool roles. Gradients come from an
    inner tape whose pullback arithmetic stays on the enclosing tape, which
    is what makes the outer meta-gradient see through all H updates.
    """
    ct = ctx0
    if cfg.inner_optimizer == "adam":
        m = np.zeros_like(ctx0)
        v = np.zeros_like(ctx0)
    for h in range(1, H + 1):
        def inner_obj(c):
            return ops.sum_(per_env(theta, c))

        _, pullback = forward_reverse(inner_obj, ct)
        (g,) = pullback(1.0)
        if cfg.inner_optimizer == "sgd":
            ct = ops.sub(ct, ops.mul(eta_xi, g))
        else:
            m = ops.add(ops.mul(cfg.adam_beta1, m), ops.mul(1 - cfg.adam_beta1, g))
            v = ops.add(ops.mul(cfg.adam_beta2, v), ops.mul(1 - cfg.adam_beta2, ops.square(g)))
            m_hat = ops.mul(1.0 / (1 - cfg.adam_beta1**h), m)
            v_hat = ops.mul(1.0 / (1 - cfg.adam_beta2**h), v)
            ct = ops.sub(ct, ops.mul(eta_xi, ops.div(m_hat, ops.add(ops.sqrt(v_hat), cfg.adam_eps))))
    return ct


def flashcavia_objective(model, cfg, xs, ys, pool_rows, n_envs, eta_xi):
    """The unrolled outer objective theta -> mean post-inner support loss."""
    lc = LossConfig(base=cfg.base, k=cfg.taylor_order, p=cfg.pool_size,
                    batch_size=n_envs, beta=0.0)
    rows = list(range(n_envs))
    per_env = batch_loss_program(model, lc, xs, ys, rows, pool_rows)
    d = model.zero_context(0).dim

    def objective(theta):
        ctx0 = np.zeros((n_envs, d))
        ct = _inner_updates(per_env, theta, ctx0, cfg, cfg.H, eta_xi)
        return ops.mean(per_env(theta, ct)), ct

    return objective


def train_flashcavia(model, state, datasets, cfg, metrics_cb=None, checkpoint_path=None):
    """Bi-level meta-training with contexts reset every outer step."""
    if cfg.trainer != "flashcavia":
        raise ConfigError("config is not for the flashcavia trainer")
    started = time.monotonic()
    n = len(state.contexts)
    size = min(cfg.batch_size, n)
    eta_xi = cfg.eta_xi
    for q in range(state.outer_iter + 1, cfg.q_max + 1):
        if _check_time(cfg.time_budget, started):
            break
        last_good = state.snapshot()
        scale = _lr_scale(cfg, q)
        picked = state.rng.choice(n, size=size, replace=False)
        env_ids = sorted(int(e) for e in picked)
        retried = False
        while True:
            try:
                objective = _flashcavia_step_objective(
                    model, state, datasets, cfg, env_ids, eta_xi
                )
                value, pullback = forward_reverse(
                    lambda th: objective(th)[0], state.theta.data
                )
                (g_theta,) = pullback(1.0)
                _update_theta(state, g_theta, cfg, cfg.eta_theta * scale)
                _record(state, metrics_cb, value, q, started)
                state.outer_iter = q
                break
            except NonFiniteError as e:
                if retried:
                    _abort(last_good, checkpoint_path, cfg, e)
                retried = True
                eta_xi = eta_xi * 0.1
                state = last_good
    # materialize per-environment contexts so in-domain evaluation has them
    _flashcavia_write_contexts(model, state, datasets, cfg, eta_xi)
    return state


def _flashcavia_step_objective(model, state, datasets, cfg, env_ids, eta_xi):
    id_to_pos = {e: i for i, e in enumerate(env_ids)}
    pools = _build_pools(state, env_ids, cfg.pool_size, self_first=True)
    pool_rows = [[id_to_pos[m.env_id] for m in pools[e]] for e in env_ids]
    xs, ys = stack_pairs(datasets, env_ids)
    return flashcavia_objective(model, cfg, xs, ys, pool_rows, len(env_ids), eta_xi)


def _flashcavia_write_contexts(model, state, datasets, cfg, eta_xi):
    env_ids = sorted(datasets.keys())
    have = [e for e in env_ids if e < len(state.contexts)]
    objective = _flashcavia_step_objective(model, state, datasets, cfg, have, eta_xi)
    _, ct = objective(state.theta.data)
    tensor = state.ctx_tensor()
    for i, e in enumerate(have):
        tensor[e] = value_of(ct)[i]
    state.set_ctx_tensor(tensor)


# ---------------------------------------------------------------------------
# context-only adaptation (candidate generation deactivated)
# ---------------------------------------------------------------------------


def adapt(model, theta, datasets, steps, optimizer="adam", lr=1e-3,
          base="mse", adam_beta1=0.9, adam_beta2=0.999, adam_eps=1e-8):
    """Fit zero-initialized contexts to support data with frozen weights.

    Environments adapt independently but are evaluated in one stacked pass.
    Returns (contexts dict env_id -> values, loss trace).
    """
    env_ids = sorted(datasets.keys())
    xs, ys = stack_pairs(datasets, env_ids)
    e_count = len(env_ids)
    lc = LossConfig(base=base, k=0, p=1, batch_size=e_count)
    pool_rows = [[i] for i in range(e_count)]
    per_env = batch_loss_program(model, lc, xs, ys, list(range(e_count)), pool_rows)
    theta_flat = theta.data if isinstance(theta, ParamVector) else theta
    d = model.zero_context(0).dim
    ct = np.zeros((e_count, d))
    m = np.zeros_like(ct)
    v = np.zeros_like(ct)
    trace = []
    for t in range(1, steps + 1):
        def obj(c):
            return ops.sum_(per_env(theta_flat, c))

        value, pullback = forward_reverse(obj, ct)
        (g,) = pullback(1.0)
        trace.append(float(value) / e_count)
        if optimizer == "sgd":
            ct = ct - lr * g
        else:
            ct, (m, v) = adam_step(ct, g, (m, v), lr, adam_beta1, adam_beta2, adam_eps, t)
    contexts = {e: ct[i].copy() for i, e in enumerate(env_ids)}
    return contexts, trace


# ---------------------------------------------------------------------------
# bookkeeping
# ---------------------------------------------------------------------------


def _record(state, metrics_cb, value, q, started):
    loss = float(value_of(value))
    state.loss_trace.append(loss)
    if metrics_cb is not None:
        metrics_cb(
            {
                "step": len(state.loss_trace),
                "outer_iter": q,
                "wall_time_s": time.monotonic() - started,
                "train_loss": loss,
            }
        )


def _abort(last_good, checkpoint_path, cfg, err):
    path = None
    if checkpoint_path is not None:
        sections, meta = state_to_sections(last_good, cfg)
        write_checkpoint(checkpoint_path, sections, meta)
        path = checkpoint_path
    raise TrainingAborted(last_good, path, f"non-finite value in training: {err}")


def state_to_sections(state: TrainState, cfg: TrainerConfig | None = None):
    sections = {"theta": state.theta.data}
    for c in state.contexts:
        sections[f"context/{c.env_id}"] = c.values
    for key, arr in state.opt_theta.items():
        sections[f"opt/theta/{key}"] = np.asarray(arr, dtype=np.float64)
    for key, arr in state.opt_xi.items():
        sections[f"opt/xi/{key}"] = np.asarray(arr, dtype=np.float64)
    if state.theta_anchor is not None:
        sections["anchor/theta"] = state.theta_anchor
    if state.ctx_anchor is not None:
        sections["anchor/ctx"] = state.ctx_anchor
    meta = {
        "outer_iter": state.outer_iter,
        "rng_state": _rng_state_to_json(state.rng),
        "theta_manifest": [
            [name, list(shape), offset] for name, shape, offset in state.theta.manifest
        ],
        "n_envs": len(state.contexts),
        "steps_recorded": len(state.loss_trace),
    }
    if cfg is not None:
        meta["trainer"] = cfg.trainer
    return sections, meta


def state_from_sections(model, sections, meta) -> TrainState:
    manifest = tuple(
        (name, tuple(shape), offset) for name, shape, offset in meta["theta_manifest"]
    )
    theta = ParamVector(sections["theta"], manifest)
    n = int(meta["n_envs"])
    contexts = []
    for e in range(n):
        c = model.zero_context(e)
        c.values = np.asarray(sections[f"context/{e}"], dtype=np.float64).reshape(-1)
        contexts.append(c)
    state = TrainState(
        theta=theta,
        contexts=contexts,
        opt_theta={
            "m": sections["opt/theta/m"],
            "v": sections["opt/theta/v"],
            "t": sections["opt/theta/t"],
        },
        opt_xi={
            "m": sections["opt/xi/m"],
            "v": sections["opt/xi/v"],
            "t": sections["opt/xi/t"],
        },
        outer_iter=int(meta["outer_iter"]),
        rng=_rng_from_json(meta["rng_state"]),
    )
    state.loss_trace = [0.0] * int(meta.get("steps_recorded", 0))
    if "anchor/theta" in sections:
        state.theta_anchor = sections["anchor/theta"]
    if "anchor/ctx" in sections:
        state.ctx_anchor = sections["anchor/ctx"]
    return state


def _rng_state_to_json(rng):
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": {k: int(v) for k, v in st["state"].items()},
        "has_uint32": int(st.get("has_uint32", 0)),
        "uinteger": int(st.get("uinteger", 0)),
    }


def _rng_from_json(blob):
    rng = np.random.default_rng(0)
    st = rng.bit_generator.state
    st["state"] = {k: int(v) for k, v in blob["state"].items()}
    st["has_uint32"] = int(blob.get("has_uint32", 0))
    st["uinteger"] = int(blob.get("uinteger", 0))
    rng.bit_generator.state = st
    return rng


TRAINERS = {
    "ncf": train_ncf,
    "ncf_star": train_ncf_star,
    "flashcavia": train_flashcavia,
}


def train(model, state, datasets, cfg, metrics_cb=None, checkpoint_path=None):
    return TRAINERS[cfg.trainer](
        model, state, datasets, cfg, metrics_cb=metrics_cb, checkpoint_path=checkpoint_path
    )
