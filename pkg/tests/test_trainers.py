"""Trainer tests: optimizer arithmetic, regime semantics, reductions."""

import numpy as np
import pytest

from selfmod.autodiff import forward_reverse, ops, shape_of
from selfmod.context import FINITE, Context
from selfmod.errors import TrainingAborted
from selfmod.models import ContextSetup, ContextualRegressor
from selfmod.nn import MlpSpec, read_checkpoint
from selfmod.trainers import (
    TrainerConfig,
    TrainState,
    adam_step,
    adapt,
    init_state,
    state_from_sections,
    state_to_sections,
    train,
    train_flashcavia,
    train_ncf,
    train_ncf_star,
    _flashcavia_step_objective,
)


def _linear_datasets(rng, n_envs, m=8, slope0=1.0, dslope=0.5):
    datasets = {}
    for e in range(n_envs):
        x = rng.uniform(-1, 1, (m, 1))
        datasets[e] = (x, (slope0 + dslope * e) * x)
    return datasets


def _model(d_ctx=1, hidden=6, seed=0, activation="tanh"):
    model = ContextualRegressor(
        MlpSpec((1 + d_ctx, hidden, 1), activation=activation),
        ContextSetup(kind=FINITE, dim=d_ctx),
    )
    return model


# --- adam --------------------------------------------------------------------


def test_adam_zero_gradient_is_identity():
    params = np.array([1.0, -2.0, 3.0])
    out, (m, v) = adam_step(params, np.zeros(3), (np.zeros(3), np.zeros(3)), 0.01, t=1)
    np.testing.assert_array_equal(out, params)
    assert not m.any() and not v.any()


def test_adam_first_step_magnitude():
    # bias correction makes the first update approximately eta for |g| >> eps
    rng = np.random.default_rng(0)
    g = rng.normal(size=100) * 10.0
    params = np.zeros(100)
    eta = 0.05
    out, _ = adam_step(params, g, (np.zeros(100), np.zeros(100)), eta, t=1)
    mag = np.abs(out)
    assert np.all(mag <= eta + 1e-12)
    assert np.all(mag >= 0.99 * eta)


def test_adam_matches_hand_simulated_trace():
    # ten steps on a scalar, shadowed by an explicit transcription
    eta, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    w = 1.0
    m = v = 0.0
    mine = np.array([1.0])
    moments = (np.zeros(1), np.zeros(1))
    for t in range(1, 11):
        g = 2.0 * w  # d/dw of w^2
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - eta * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        g_mine = 2.0 * mine
        mine, moments = adam_step(mine, g_mine, moments, eta, b1, b2, eps, t)
        assert abs(float(mine[0]) - w) < 1e-15


# --- ncf ---------------------------------------------------------------------


def test_ncf_reduces_to_plain_alternating_descent():
    rng = np.random.default_rng(1)
    model = _model(hidden=4)
    datasets = {0: _linear_datasets(rng, 1)[0]}
    cfg = TrainerConfig(trainer="ncf", q_max=20, inner_steps=1, eta_theta=1e-2,
                        eta_xi=1e-2, beta=0.0, batch_size=1, pool_size=1,
                        taylor_order=0, optimizer_theta="sgd", optimizer_xi="sgd")
    state = train(model, init_state(model, 1, 0), datasets, cfg)

    theta = model.init_theta(0).data.copy()
    ctx = np.zeros((1, 1))
    x, y = datasets[0]
    oracle = []
    for _ in range(cfg.q_max):
        def lt(th):
            return ops.mean(ops.square(ops.sub(model.apply(x[None], th, ctx), y[None])))

        v, pb = forward_reverse(lt, theta)
        theta = theta - cfg.eta_theta * pb(1.0)[0]
        oracle.append(float(v))

        def lc(c):
            return ops.mean(ops.square(ops.sub(model.apply(x[None], theta, c), y[None])))

        v, pb = forward_reverse(lc, ctx)
        ctx = ctx - cfg.eta_xi * pb(1.0)[0]
        oracle.append(float(v))
    np.testing.assert_allclose(state.loss_trace, oracle, atol=1e-12)


def test_ncf_theta_frozen_when_rate_zero():
    rng = np.random.default_rng(2)
    model = _model()
    datasets = _linear_datasets(rng, 2)
    cfg = TrainerConfig(trainer="ncf", q_max=10, inner_steps=2, eta_theta=0.0,
                        eta_xi=1e-2, beta=1e-3, batch_size=2, pool_size=2,
                        taylor_order=1, optimizer_theta="sgd")
    state = init_state(model, 2, 0)
    theta0 = state.theta.data.copy()
    ctx0 = state.ctx_tensor().copy()
    state = train(model, state, datasets, cfg)
    assert np.array_equal(state.theta.data, theta0)
    assert not np.array_equal(state.ctx_tensor(), ctx0)


def test_ncf_linear_two_env_toy_converges():
    rng = np.random.default_rng(3)
    model = _model(d_ctx=2, hidden=16)
    datasets = _linear_datasets(rng, 2, m=16, slope0=1.0, dslope=1.0)  # slopes 1, 2
    cfg = TrainerConfig(trainer="ncf", q_max=500, inner_steps=3, eta_theta=1e-2,
                        eta_xi=1e-2, beta=1e-3, batch_size=2, pool_size=2,
                        taylor_order=1)
    state = train(model, init_state(model, 2, 1), datasets, cfg)
    assert state.loss_trace[-1] < 1e-4


def test_ncf_monotone_inner_descent_small_rate():
    rng = np.random.default_rng(4)
    model = _model(hidden=4)
    datasets = _linear_datasets(rng, 2)
    cfg = TrainerConfig(trainer="ncf", q_max=3, inner_steps=10, eta_theta=1e-4,
                        eta_xi=1e-4, beta=1e-2, batch_size=2, pool_size=2,
                        taylor_order=0, optimizer_theta="sgd", optimizer_xi="sgd")
    state = train(model, init_state(model, 2, 2), datasets, cfg)
    per_step = np.array(state.loss_trace).reshape(cfg.q_max, 2 * cfg.inner_steps)
    for q in range(cfg.q_max):
        theta_phase = per_step[q, : cfg.inner_steps]
        assert np.all(np.diff(theta_phase) <= 1e-12)


def test_stochastic_full_batch_equals_deterministic_sweep():
    rng = np.random.default_rng(5)
    model = _model()
    n = 4
    datasets = _linear_datasets(rng, n)
    cfg = TrainerConfig(trainer="ncf", q_max=15, inner_steps=2, eta_theta=2e-3,
                        eta_xi=2e-3, beta=1e-3, batch_size=n, pool_size=2,
                        taylor_order=1)
    stochastic = train(model, init_state(model, n, 3), datasets, cfg)

    # no-sampling oracle: same phases over the full environment set, no rng
    from selfmod.trainers import _StepContext, _update_theta, _update_ctx_rows
    from selfmod.loss import proximal_penalty

    state = init_state(model, n, 3)
    for q in range(cfg.q_max):
        env_ids = list(range(n))
        step = _StepContext(model, state, datasets, cfg, env_ids)
        theta_anchor = state.theta.data.copy()
        ctx_full = state.ctx_tensor()
        rows = np.arange(n)
        ctx_anchor = ctx_full[rows].copy()
        for _ in range(cfg.inner_steps):
            def g_obj(th):
                return ops.add(step.data_loss(th, ctx_full),
                               proximal_penalty(th, theta_anchor, cfg.beta))

            _, pb = forward_reverse(g_obj, state.theta.data)
            _update_theta(state, pb(1.0)[0], cfg, cfg.eta_theta)
        for _ in range(cfg.inner_steps):
            cur = state.ctx_tensor()

            def h_obj(ct):
                # mirror the trainer's expression order exactly: the context
                # leaf accumulates three cotangents and float addition is not
                # associative, so building the program differently would cost
                # the last ulp
                data = step.data_loss(state.theta.data, ct)
                moved = ops.take(ct, indices=rows)
                return ops.add(data, proximal_penalty(moved, ctx_anchor, cfg.beta))

            _, pb = forward_reverse(h_obj, cur)
            _update_ctx_rows(state, rows, pb(1.0)[0][rows], cfg, cfg.eta_xi)
    assert np.array_equal(stochastic.theta.data, state.theta.data)
    assert np.array_equal(stochastic.ctx_tensor(), state.ctx_tensor())


# --- ncf_star ----------------------------------------------------------------


def test_ncf_star_theta_update_matches_ncf_first_move():
    # with frozen contexts (eta_xi = 0) the two regimes walk the same path
    rng = np.random.default_rng(6)
    model = _model()
    datasets = _linear_datasets(rng, 2)
    kw = dict(q_max=8, eta_theta=1e-2, eta_xi=0.0, batch_size=2, pool_size=2,
              taylor_order=1, optimizer_theta="sgd", optimizer_xi="sgd")
    a = train(model, init_state(model, 2, 4), datasets,
              TrainerConfig(trainer="ncf", inner_steps=1, beta=0.0, **kw))
    b = train(model, init_state(model, 2, 4), datasets,
              TrainerConfig(trainer="ncf_star", **kw))
    assert np.array_equal(a.theta.data, b.theta.data)

    # and with frozen weights the context paths coincide as well
    kw2 = dict(q_max=8, eta_theta=0.0, eta_xi=1e-2, batch_size=2, pool_size=2,
               taylor_order=1, optimizer_theta="sgd", optimizer_xi="sgd")
    a2 = train(model, init_state(model, 2, 4), datasets,
               TrainerConfig(trainer="ncf", inner_steps=1, beta=0.0, **kw2))
    b2 = train(model, init_state(model, 2, 4), datasets,
               TrainerConfig(trainer="ncf_star", **kw2))
    assert np.array_equal(a2.ctx_tensor(), b2.ctx_tensor())


def test_ncf_star_stationary_at_zero_gradient():
    # a perfectly fit constant-zero task keeps parameters fixed
    class ZeroModel:
        def __init__(self, inner):
            self.inner = inner

        def apply(self, x, theta, ctx):
            return self.inner.apply(x, theta, ctx)

        def init_theta(self, seed):
            pv = self.inner.init_theta(seed)
            pv.data = np.zeros_like(pv.data)
            return pv

        def zero_context(self, e):
            return self.inner.zero_context(e)

        def theta_dim(self):
            return self.inner.theta_dim()

    model = ZeroModel(_model(activation="tanh"))
    x = np.linspace(-1, 1, 5)[:, None]
    datasets = {0: (x, np.zeros((5, 1))), 1: (x, np.zeros((5, 1)))}
    cfg = TrainerConfig(trainer="ncf_star", q_max=5, eta_theta=1e-2, eta_xi=1e-2,
                        batch_size=2, pool_size=2, taylor_order=1,
                        optimizer_theta="sgd", optimizer_xi="sgd")
    state = train(model, init_state(model, 2, 5), datasets, cfg)
    assert not state.theta.data.any()
    assert not state.ctx_tensor().any()
    assert max(state.loss_trace) == 0.0


def test_ncf_star_linear_toy_converges():
    rng = np.random.default_rng(7)
    model = _model(d_ctx=2, hidden=16)
    datasets = _linear_datasets(rng, 2, m=16, slope0=1.0, dslope=1.0)
    cfg = TrainerConfig(trainer="ncf_star", q_max=1500, eta_theta=1e-2, eta_xi=1e-2,
                        batch_size=2, pool_size=2, taylor_order=1)
    state = train(model, init_state(model, 2, 6), datasets, cfg)
    assert state.loss_trace[-1] < 1e-4


# --- flashcavia --------------------------------------------------------------


def test_flashcavia_h0_equals_context_free_training():
    rng = np.random.default_rng(8)
    model = _model()
    datasets = _linear_datasets(rng, 3)
    cfg = TrainerConfig(trainer="flashcavia", q_max=12, H=0, eta_theta=1e-2,
                        eta_xi=1e-1, batch_size=3, pool_size=1, taylor_order=0,
                        optimizer_theta="sgd")
    state = train(model, init_state(model, 3, 7), datasets, cfg)

    theta = model.init_theta(7).data.copy()
    zeros = np.zeros((3, 1))
    xs = np.stack([datasets[e][0] for e in range(3)])
    ys = np.stack([datasets[e][1] for e in range(3)])
    for _ in range(cfg.q_max):
        def obj(th):
            pred = model.apply(xs[:, None], th, zeros[:, None, :])
            errs = ops.square(ops.sub(pred, ys[:, None]))
            per_env = ops.mean(errs, axis=(1, 2, 3))
            return ops.mean(per_env)

        _, pb = forward_reverse(obj, theta)
        theta = theta - cfg.eta_theta * pb(1.0)[0]
    np.testing.assert_allclose(state.theta.data, theta, atol=1e-12)


class OffsetModel:
    """Prediction = theta + context, constant in x: the scalar unroll toy."""

    def apply(self, x, theta, ctx):
        th = ops.reshape(theta, shape=(1, 1))
        c = ops.reshape(ctx, shape=shape_of(ctx)[:-1] + (1, 1))
        return ops.add(ops.mul(x, 0.0), ops.add(th, c))

    def init_theta(self, seed):
        from selfmod.nn import ParamVector

        return ParamVector(np.array([0.7]), (("w", (1,), 0),))

    def zero_context(self, e):
        return Context(kind=FINITE, values=np.zeros(1), env_id=e)

    def theta_dim(self):
        return 1


def test_flashcavia_h1_meta_gradient_matches_symbolic_unroll():
    # loss(theta, xi) = (theta + xi - y)^2 on one point; one inner step of
    # sgd from xi=0 gives xi1 = -2 eta (theta - y), so the outer loss is
    # ((theta - y)(1 - 2 eta))^2 with meta-gradient 2 (theta - y)(1 - 2 eta)^2
    model = OffsetModel()
    y = np.array([[0.2]])
    datasets = {0: (np.zeros((1, 1)), y)}
    eta = 0.1
    cfg = TrainerConfig(trainer="flashcavia", q_max=1, H=1, eta_theta=1e-3,
                        eta_xi=eta, batch_size=1, pool_size=1, taylor_order=0)
    state = init_state(model, 1, 0)
    obj = _flashcavia_step_objective(model, state, datasets, cfg, [0], eta)
    theta0 = np.array([0.7])
    _, pb = forward_reverse(lambda th: obj(th)[0], theta0)
    (g,) = pb(1.0)
    expected = 2.0 * (0.7 - 0.2) * (1.0 - 2.0 * eta) ** 2
    assert abs(float(g[0]) - expected) < 1e-12


def test_flashcavia_meta_gradient_matches_fd_unrolled():
    rng = np.random.default_rng(9)
    model = _model(hidden=3)
    datasets = _linear_datasets(rng, 2, m=5)
    cfg = TrainerConfig(trainer="flashcavia", q_max=1, H=3, eta_theta=1e-3,
                        eta_xi=0.05, batch_size=2, pool_size=1, taylor_order=0)
    state = init_state(model, 2, 8)
    obj = _flashcavia_step_objective(model, state, datasets, cfg, [0, 1], cfg.eta_xi)
    theta0 = state.theta.data.copy()
    _, pb = forward_reverse(lambda th: obj(th)[0], theta0)
    (g,) = pb(1.0)
    h = 1e-6
    for i in range(0, theta0.size, 2):
        tp, tm = theta0.copy(), theta0.copy()
        tp[i] += h
        tm[i] -= h
        fd = (float(obj(tp)[0]) - float(obj(tm)[0])) / (2 * h)
        assert abs(float(g[i]) - fd) / max(abs(fd), 1e-8) < 1e-4


def test_flashcavia_more_inner_steps_fit_support_better():
    from selfmod.tasks import gen_sine

    ds = gen_sine(6, 10, 10, seed=5, n_adapt=2)
    model = ContextualRegressor(
        MlpSpec((1 + 2, 16, 1), activation="softplus"),
        ContextSetup(kind=FINITE, dim=2),
    )
    finals = {}
    for H in (1, 5):
        cfg = TrainerConfig(trainer="flashcavia", q_max=60, H=H, eta_theta=5e-3,
                            eta_xi=1e-2, batch_size=6, pool_size=1, taylor_order=0)
        state = train(model, init_state(model, 6, 9), ds.support_pairs("train"), cfg)
        finals[H] = state.loss_trace[-1]
    assert finals[5] <= finals[1]


# --- adapt -------------------------------------------------------------------


def test_adapt_zero_steps_returns_zero_context():
    model = _model()
    datasets = {0: (np.zeros((3, 1)), np.zeros((3, 1)))}
    ctxs, trace = adapt(model, model.init_theta(0), datasets, steps=0)
    assert not ctxs[0].any()
    assert trace == []


def test_adapt_consistency_on_trained_environment():
    rng = np.random.default_rng(10)
    model = _model(d_ctx=2, hidden=16)
    datasets = _linear_datasets(rng, 2, m=16, slope0=1.0, dslope=1.0)
    cfg = TrainerConfig(trainer="ncf", q_max=400, inner_steps=3, eta_theta=1e-2,
                        eta_xi=1e-2, beta=1e-3, batch_size=2, pool_size=2,
                        taylor_order=1)
    state = train(model, init_state(model, 2, 10), datasets, cfg)
    query = {e: (rng.uniform(-1, 1, (20, 1)), None) for e in range(2)}
    for e in range(2):
        x = query[e][0]
        query[e] = (x, (1.0 + 1.0 * e) * x)

    def query_mse(ctx_vals, e):
        pred = np.asarray(model.apply(query[e][0], state.theta.data, ctx_vals))
        return float(np.mean((pred - query[e][1]) ** 2))

    trained = {e: query_mse(state.contexts[e].values, e) for e in range(2)}
    readapted, _ = adapt(model, state.theta, datasets, steps=800, optimizer="adam", lr=1e-2)
    for e in range(2):
        assert query_mse(readapted[e], e) <= max(2.0 * trained[e], 1e-4)


# --- cross-cutting -----------------------------------------------------------


@pytest.mark.parametrize("name", ["ncf", "ncf_star", "flashcavia"])
def test_seed_determinism_bitwise(name):
    rng = np.random.default_rng(11)
    model = _model()
    datasets = _linear_datasets(rng, 3)
    cfg = TrainerConfig(trainer=name, q_max=10, inner_steps=2, H=2, eta_theta=3e-3,
                        eta_xi=3e-3 if name != "flashcavia" else 5e-2,
                        beta=1e-3, batch_size=2, pool_size=1 if name == "flashcavia" else 2,
                        taylor_order=0 if name == "flashcavia" else 1)
    a = train(model, init_state(model, 3, 12), datasets, cfg)
    b = train(model, init_state(model, 3, 12), datasets, cfg)
    assert a.theta.data.tobytes() == b.theta.data.tobytes()
    assert a.ctx_tensor().tobytes() == b.ctx_tensor().tobytes()


def test_time_budget_stops_early():
    rng = np.random.default_rng(12)
    model = _model()
    datasets = _linear_datasets(rng, 2)
    cfg = TrainerConfig(trainer="ncf", q_max=10_000, inner_steps=2, eta_theta=1e-3,
                        eta_xi=1e-3, batch_size=2, pool_size=2, taylor_order=1,
                        time_budget=0.5)
    import time

    t0 = time.monotonic()
    state = train(model, init_state(model, 2, 13), datasets, cfg)
    assert time.monotonic() - t0 < 5.0
    assert state.outer_iter < 10_000


def test_nonfinite_aborts_with_checkpoint(tmp_path):
    rng = np.random.default_rng(13)
    model = _model(activation="relu")
    datasets = _linear_datasets(rng, 2)
    cfg = TrainerConfig(trainer="ncf", q_max=200, inner_steps=2, eta_theta=1e6,
                        eta_xi=1e6, beta=0.0, batch_size=2, pool_size=2,
                        taylor_order=2, optimizer_theta="sgd", optimizer_xi="sgd")
    path = tmp_path / "abort.smod"
    with pytest.raises(TrainingAborted) as err:
        train(model, init_state(model, 2, 14), datasets, cfg, checkpoint_path=str(path))
    assert path.exists()
    sections, meta = read_checkpoint(path)
    assert np.all(np.isfinite(sections["theta"]))
    assert err.value.state is not None


def test_state_roundtrip_through_sections():
    rng = np.random.default_rng(14)
    model = _model()
    datasets = _linear_datasets(rng, 2)
    cfg = TrainerConfig(trainer="ncf", q_max=5, inner_steps=2, eta_theta=1e-3,
                        eta_xi=1e-3, batch_size=2, pool_size=2, taylor_order=1)
    state = train(model, init_state(model, 2, 15), datasets, cfg)
    sections, meta = state_to_sections(state, cfg)
    back = state_from_sections(model, sections, meta)
    assert np.array_equal(back.theta.data, state.theta.data)
    assert np.array_equal(back.ctx_tensor(), state.ctx_tensor())
    assert back.outer_iter == state.outer_iter
    # rng stream continues identically
    assert state.rng.integers(1000) == back.rng.integers(1000)
