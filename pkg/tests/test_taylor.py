"""Candidate-prediction tests: exactness, anchor consistency, ensembles."""

import numpy as np
import pytest

from selfmod.autodiff import jet_propagate, nested_derivative_oracle, ops, shape_of
from selfmod.context import FINITE, Context, ContextPool
from selfmod.errors import KindError
from selfmod.models import ContextSetup, ContextualRegressor
from selfmod.nn import MlpSpec
from selfmod.taylor import (
    CandidateSet,
    candidate_predict,
    candidate_predictions,
    candidate_set,
    ensemble_stats,
)


def fin(values, env_id=0):
    return Context(kind=FINITE, values=np.asarray(values, dtype=float), env_id=env_id)


class ScalarProbe:
    """Prediction = sin(context); isolates the expansion arithmetic."""

    def apply(self, x, theta, ctx):
        return ops.sin(ctx)


class LinearInContext:
    def __init__(self, w):
        self.w = w

    def apply(self, x, theta, ctx):
        u = ops.sum_(ops.mul(self.w, ctx), axis=-1, keepdims=True)
        u = ops.reshape(u, shape=shape_of(u)[:-1] + (1, 1))
        return ops.mul(x, u)


def _mlp_model(d_ctx=2, seed=0):
    model = ContextualRegressor(
        MlpSpec((1 + d_ctx, 8, 1), activation="swish"),
        ContextSetup(kind=FINITE, dim=d_ctx),
    )
    return model, model.init_theta(seed)


def test_anchor_equals_target_is_direct_call():
    model, theta = _mlp_model()
    x = np.random.default_rng(0).uniform(-1, 1, (5, 1))
    ctx = fin([0.3, -0.4])
    direct = np.asarray(model.apply(x, theta.data, ctx.values))
    for k in range(0, 5):
        pred = candidate_predict(model, theta.data, x, ctx, ctx, k)
        np.testing.assert_allclose(np.asarray(pred), direct, atol=1e-12)


def test_first_order_exact_for_linear_model():
    rng = np.random.default_rng(1)
    model = LinearInContext(rng.normal(size=3))
    x = rng.uniform(-1, 1, (6, 1))
    target, anchor = fin(rng.normal(size=3), 0), fin(rng.normal(size=3), 1)
    pred = candidate_predict(model, None, x, target, anchor, 1)
    direct = model.apply(x, None, target.values)
    np.testing.assert_allclose(np.asarray(pred), np.asarray(direct), atol=1e-10)


def test_sin_probe_closed_form():
    model = ScalarProbe()
    target, anchor = fin([0.1]), fin([0.0], 1)
    pred = candidate_predict(model, None, None, target, anchor, 3)
    formula = 0.1 - 0.1**3 / 6.0
    assert abs(float(np.asarray(pred).ravel()[0]) - formula) < 1e-12


def test_kind_mismatch_rejected():
    model = ScalarProbe()
    with pytest.raises(KindError):
        candidate_predict(model, None, None, fin([0.1]), fin([0.1, 0.2], 1), 1)


def test_candidate_set_single_member_pool():
    model, theta = _mlp_model()
    x = np.random.default_rng(2).uniform(-1, 1, (4, 1))
    ctx = fin([0.2, 0.1])
    cs = candidate_set(model, theta.data, x, ctx, ContextPool([ctx]), 2)
    assert len(cs.predictions) == 1
    np.testing.assert_allclose(
        np.asarray(cs.predictions[0]),
        np.asarray(model.apply(x, theta.data, ctx.values)),
        atol=1e-12,
    )


def test_candidate_set_zero_init_identical():
    model, theta = _mlp_model()
    x = np.random.default_rng(3).uniform(-1, 1, (4, 1))
    ctxs = [fin(np.zeros(2), e) for e in range(3)]
    cs = candidate_set(model, theta.data, x, ctxs[0], ContextPool(ctxs), 2)
    for pred in cs.predictions[1:]:
        np.testing.assert_array_equal(np.asarray(pred), np.asarray(cs.predictions[0]))


def test_candidate_mean_matches_hand_expansion():
    # two-environment toy: mean over candidates against a hand-built sum
    model = ScalarProbe()
    target = fin([0.2])
    anchors = [fin([0.0], 0), fin([0.1], 1)]
    cs = candidate_set(model, None, None, target, ContextPool(anchors), 2)
    stack = np.array([np.asarray(p).ravel()[0] for p in cs.predictions])

    def taylor2(a, d):
        return np.sin(a) + np.cos(a) * d - np.sin(a) * d**2 / 2.0

    hand = np.array([taylor2(0.0, 0.2), taylor2(0.1, 0.1)])
    np.testing.assert_allclose(stack, hand, atol=1e-14)
    np.testing.assert_allclose(stack.mean(), hand.mean(), atol=1e-14)


def test_ensemble_stats():
    pool = ContextPool([fin([0.0], 0), fin([0.0], 1)])
    cs = CandidateSet(predictions=[np.zeros((2, 1)), np.full((2, 1), 2.0)],
                      pool=pool, order=0)
    mean, var = ensemble_stats(cs)
    np.testing.assert_array_equal(mean, np.ones((2, 1)))
    np.testing.assert_array_equal(var, np.ones((2, 1)))
    same = CandidateSet(predictions=[np.ones((2, 1))] * 2, pool=pool, order=0)
    _, var0 = ensemble_stats(same)
    assert not var0.any()


def test_ensemble_stats_matches_two_pass_oracle():
    rng = np.random.default_rng(4)
    pool = ContextPool([fin(np.zeros(1), e) for e in range(5)])
    preds = [rng.normal(size=(3, 2)) for _ in range(5)]
    cs = CandidateSet(predictions=preds, pool=pool, order=1)
    mean, var = ensemble_stats(cs)
    stack = np.stack(preds)
    mu = stack.sum(axis=0) / 5.0
    sigma2 = sum((p - mu) ** 2 for p in preds) / 5.0
    np.testing.assert_allclose(mean, mu, atol=1e-14)
    np.testing.assert_allclose(var, sigma2, atol=1e-14)


def test_polynomial_exactness_property():
    # degree-d dependence on the context reproduces exactly once k >= d
    rng = np.random.default_rng(5)
    from selfmod.bench import _PolyInContext

    for _ in range(5):
        model = _PolyInContext(rng.normal(size=2), rng.normal(size=2))
        x = rng.uniform(-1, 1, (4, 1))
        target, anchor = fin(rng.normal(size=2)), fin(rng.normal(size=2), 1)
        direct = np.asarray(model.apply(x, None, target.values))
        for k in (3, 4, 6):
            pred = candidate_predict(model, None, x, target, anchor, k)
            assert np.max(np.abs(np.asarray(pred) - direct)) < 1e-9


def test_prefix_property_of_orders():
    # order-k result equals the partial sums of an order-(k+1) jet
    model, theta = _mlp_model()
    x = np.random.default_rng(6).uniform(-1, 1, (3, 1))
    target, anchor = fin([0.15, -0.1]), fin([0.05, 0.2], 1)
    series = [target.values - anchor.values] + [np.zeros(2)] * 3
    jet = jet_propagate(lambda c: model.apply(x, theta.data, c), anchor.values, series)
    for k in (1, 2, 3):
        pred = candidate_predict(model, theta.data, x, target, anchor, k)
        partial = sum(np.asarray(c) for c in jet.coeffs[: k + 1])
        np.testing.assert_allclose(np.asarray(pred), partial, atol=1e-12)


def test_low_orders_match_nested_oracle_assembly():
    # k <= 2 candidates equal the explicit derivative assembly of the series
    model, theta = _mlp_model()
    x = np.random.default_rng(7).uniform(-1, 1, (3, 1))
    target, anchor = fin([0.2, -0.3]), fin([-0.1, 0.1], 1)
    delta = target.values - anchor.values

    def f(c):
        return model.apply(x, theta.data, c)

    d0 = np.asarray(f(anchor.values))
    d1 = np.asarray(nested_derivative_oracle(f, anchor.values, delta, 1))
    d2 = np.asarray(nested_derivative_oracle(f, anchor.values, delta, 2))
    for k, expected in ((0, d0), (1, d0 + d1), (2, d0 + d1 + d2 / 2.0)):
        pred = np.asarray(candidate_predict(model, theta.data, x, target, anchor, k))
        rel = np.max(np.abs(pred - expected)) / max(np.max(np.abs(expected)), 1e-12)
        assert rel < 1e-8
