"""Deterministic verification mini-suite behind `selfmod bench`.

Each check returns a dict with a boolean `passed` plus the measured numbers.
Nothing time-dependent goes into the results (reruns must be byte-identical);
timings are printed by the CLI, not recorded.
"""

from __future__ import annotations

import numpy as np

from .autodiff import forward_reverse, jet_propagate, nested_derivative_oracle, ops
from .context import FINITE, Context, ContextPool
from .loss import Batch, LossConfig, local_pools, mean_loss, stochastic_grad
from .models import ContextSetup, ContextualRegressor
from .nn import MlpSpec
from .ode import IvpSpec, dopri5_solve, rk4_solve
from .taylor import candidate_predict
from .tasks import gen_sine
from .trainers import TrainerConfig, init_state, train


def _toy_model(d_ctx=2, hidden=6, seed=0):
    model = ContextualRegressor(
        MlpSpec((1 + d_ctx, hidden, 1), activation="swish"),
        ContextSetup(kind=FINITE, dim=d_ctx),
    )
    return model, model.init_theta(seed)


class _PolyInContext:
    """x * (w1.ctx) + x^2 * (w2.ctx)^3: cubic in the context, exactly."""

    def __init__(self, w1, w2):
        self.w1 = w1
        self.w2 = w2

    def apply(self, x, theta, ctx):
        from .autodiff import shape_of

        u = ops.sum_(ops.mul(self.w1, ctx), axis=-1, keepdims=True)
        v = ops.sum_(ops.mul(self.w2, ctx), axis=-1, keepdims=True)
        u_col = ops.reshape(u, shape=shape_of(u)[:-1] + (1, 1))
        v3 = ops.mul(v, ops.square(v))
        v_col = ops.reshape(v3, shape=shape_of(v3)[:-1] + (1, 1))
        return ops.add(ops.mul(x, u_col), ops.mul(ops.square(x), v_col))


def check_taylor_exactness(seed):
    """Candidates must be exact for models polynomial in the context."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(5):
        d = 3
        model = _PolyInContext(rng.normal(size=(d,)), rng.normal(size=(d,)))
        x = rng.uniform(-1, 1, size=(6, 1))
        tgt = Context(kind=FINITE, values=rng.normal(size=d), env_id=0)
        anchor = Context(kind=FINITE, values=rng.normal(size=d), env_id=1)
        direct = model.apply(x, None, tgt.values)
        pred = candidate_predict(model, None, x, tgt, anchor, k=3)
        worst = max(worst, float(np.max(np.abs(pred - direct))))
    return {"passed": bool(worst < 1e-9), "max_abs_err": worst}


def check_jet_vs_oracle(seed):
    rng = np.random.default_rng(seed)
    spec = MlpSpec((2, 6, 1), activation="swish")
    from .nn import init_params, mlp_apply

    worst = 0.0
    for trial in range(5):
        params = init_params(spec, seed + trial)
        x = rng.uniform(-1, 1, size=(3, 2))
        v = rng.normal(size=(3, 2))

        def f(z):
            return ops.mean(mlp_apply(spec, params, z))

        jet = jet_propagate(f, x, [v] + [np.zeros_like(v)] * 3)
        fact = 1.0
        for n in range(1, 5):
            fact *= n
            oracle = nested_derivative_oracle(f, x, v, n)
            got = float(jet.coeffs[n]) * fact
            rel = abs(got - float(oracle)) / max(abs(float(oracle)), 1e-12)
            worst = max(worst, rel)
    return {"passed": bool(worst < 1e-8), "max_rel_err": worst}


def check_unbiasedness(seed):
    rng = np.random.default_rng(seed)
    model, theta = _toy_model(seed=seed)
    n = 4
    ctxs = [Context(kind=FINITE, values=rng.normal(size=2) * 0.3, env_id=e) for e in range(n)]
    datasets = {e: (rng.uniform(-1, 1, (6, 1)), rng.normal(size=(6, 1))) for e in range(n)}
    cfg = LossConfig(base="mse", k=1, p=2, batch_size=1)
    full = Batch(env_ids=list(range(n)), seed_env=0)
    pools = local_pools(ctxs, full, cfg.p)
    full_cfg = LossConfig(base="mse", k=1, p=2, batch_size=n)
    exact = stochastic_grad(model, theta.data, ctxs, datasets, full, full_cfg, pools=pools)
    acc = np.zeros_like(theta.data)
    for e in range(n):
        b = Batch(env_ids=[e], seed_env=e)
        sg = stochastic_grad(model, theta.data, ctxs, datasets, b, cfg, pools=pools)
        acc += sg.theta
    acc /= n
    rel = float(np.max(np.abs(acc - exact.theta)) / max(np.max(np.abs(exact.theta)), 1e-15))
    return {"passed": bool(rel < 1e-10), "max_rel_err": rel}


def check_integrators(seed):
    def lin(t, y, th, cx):
        return y

    errs = []
    for dt in (0.1, 0.05):
        spec = IvpSpec(vector_field=lin, t_span=(0.0, 1.0), save_times=np.array([1.0]), dt=dt)
        tr = rk4_solve(spec, np.array([[1.0]]))
        errs.append(abs(float(tr.states[0, 0, 0]) - np.e))
    ratio = errs[0] / errs[1]

    def ho(t, y, th, cx):
        x = ops.slice_(y, start=0, stop=1, axis=-1)
        v = ops.slice_(y, start=1, stop=2, axis=-1)
        return ops.concat([v, ops.neg(x)], axis=-1)

    spec = IvpSpec(vector_field=ho, t_span=(0.0, 20.0),
                   save_times=np.linspace(0.0, 20.0, 41), rtol=1e-6, atol=1e-8)
    tr = dopri5_solve(spec, np.array([[1.0, 0.0]]))
    energy = 0.5 * np.sum(tr.states**2, axis=-1)
    drift = float(np.max(np.abs(energy - 0.5)) / 0.5)
    return {
        "passed": bool(12.0 <= ratio <= 20.0 and drift < 1e-4),
        "rk4_error_ratio": ratio,
        "dopri5_energy_drift": drift,
    }


def check_reductions(seed):
    rng = np.random.default_rng(seed)
    model, _ = _toy_model(d_ctx=1, hidden=4, seed=seed)
    datasets = {0: (rng.uniform(-1, 1, (6, 1)), rng.uniform(-1, 1, (6, 1)))}
    cfg = TrainerConfig(
        trainer="ncf", q_max=10, inner_steps=1, eta_theta=1e-2, eta_xi=1e-2,
        beta=0.0, batch_size=1, pool_size=1, taylor_order=0,
        optimizer_theta="sgd", optimizer_xi="sgd",
    )
    state = train(model, init_state(model, 1, seed), datasets, cfg)

    # direct alternating descent on the same objective
    theta = model.init_theta(seed).data.copy()
    ctx = np.zeros((1, 1))
    trace = []
    for _ in range(cfg.q_max):
        def loss_t(th):
            pred = model.apply(datasets[0][0][None], th, ctx)
            return ops.mean(ops.square(ops.sub(pred, datasets[0][1][None])))

        v, pb = forward_reverse(loss_t, theta)
        theta = theta - cfg.eta_theta * pb(1.0)[0]
        trace.append(float(v))

        def loss_c(c):
            pred = model.apply(datasets[0][0][None], theta, c)
            return ops.mean(ops.square(ops.sub(pred, datasets[0][1][None])))

        v, pb = forward_reverse(loss_c, ctx)
        ctx = ctx - cfg.eta_xi * pb(1.0)[0]
        trace.append(float(v))
    diff = float(np.max(np.abs(np.array(state.loss_trace) - np.array(trace))))
    return {"passed": bool(diff < 1e-12), "trace_max_diff": diff}


def check_train_digest(seed):
    """A tiny end-to-end run whose final numbers are part of the record."""
    ds = gen_sine(8, 10, 10, seed, n_adapt=4)
    model = ContextualRegressor(
        MlpSpec((1 + 2, 16, 16, 1), activation="softplus"),
        ContextSetup(kind=FINITE, dim=2),
    )
    cfg = TrainerConfig(trainer="ncf", q_max=40, inner_steps=2, eta_theta=5e-3,
                        eta_xi=5e-3, beta=1e-3, batch_size=8, pool_size=2,
                        taylor_order=1)
    state = init_state(model, 8, seed)
    state = train(model, state, ds.support_pairs("train"), cfg)
    first, last = state.loss_trace[0], state.loss_trace[-1]
    return {
        "passed": bool(last < first),
        "first_loss": float(first),
        "last_loss": float(last),
        "theta_digest": float(np.sum(np.abs(state.theta.data))),
    }


def run_suite(seed=0):
    return {
        "taylor_exactness": check_taylor_exactness(seed),
        "jet_vs_oracle": check_jet_vs_oracle(seed),
        "estimator_unbiasedness": check_unbiasedness(seed),
        "integrators": check_integrators(seed),
        "reduction_identity": check_reductions(seed),
        "train_digest": check_train_digest(seed),
    }
