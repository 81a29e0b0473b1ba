"""Context, pool-selection, and embedding tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfmod.context import (
    FINITE,
    FUNCTIONAL,
    Context,
    context_embedding,
    l1_distance,
    select_pool,
    zero_context,
)
from selfmod.errors import ConfigError, InputError, KindError
from selfmod.nn import MlpSpec


def fin(values, env_id=0):
    return Context(kind=FINITE, values=np.asarray(values, dtype=float), env_id=env_id)


def test_l1_basics():
    assert l1_distance(fin([0, 0]), fin([0, 0])) == 0.0
    assert l1_distance(fin([1, -2]), fin([0, 0])) == 3.0


def test_l1_kind_mismatch():
    spec = MlpSpec((1, 2, 1))
    func = zero_context(0, spec=spec)
    with pytest.raises(KindError):
        l1_distance(fin([0.0]), func)
    with pytest.raises(KindError):
        l1_distance(fin([0.0]), fin([0.0, 1.0]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_l1_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (fin(rng.normal(size=4), i) for i in range(3))
    dab, dba = l1_distance(a, b), l1_distance(b, a)
    assert dab == dba >= 0.0
    assert l1_distance(a, a) == 0.0
    assert l1_distance(a, c) <= dab + l1_distance(b, c) + 1e-12


def test_select_pool_zero_init_tie_break():
    ctxs = [fin([0.0, 0.0], env_id=e) for e in range(8)]
    pool = select_pool(ctxs[5], ctxs, 2)
    assert [m.env_id for m in pool] == [0, 1]


def test_select_pool_by_distance():
    ctxs = [fin([0.0], 0), fin([1.0], 1), fin([3.0], 2)]
    target = fin([0.9], 99)
    pool = select_pool(target, ctxs, 2)
    assert [m.env_id for m in pool] == [1, 0]


def test_select_pool_matches_sort_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        ctxs = [fin(rng.normal(size=3), e) for e in range(50)]
        target = fin(rng.normal(size=3), 999)
        p = int(rng.integers(1, 10))
        pool = select_pool(target, ctxs, p)
        dists = sorted(
            (float(np.sum(np.abs(target.values - c.values))), c.env_id) for c in ctxs
        )
        expected = [env for _, env in dists[:p]]
        assert [m.env_id for m in pool] == expected


def test_select_pool_permutation_invariant():
    rng = np.random.default_rng(8)
    ctxs = [fin(rng.normal(size=2), e) for e in range(12)]
    target = fin(rng.normal(size=2), 50)
    ids = [m.env_id for m in select_pool(target, ctxs, 4)]
    shuffled = list(ctxs)
    rng.shuffle(shuffled)
    ids2 = [m.env_id for m in select_pool(target, shuffled, 4)]
    assert ids == ids2


def test_select_pool_errors():
    ctxs = [fin([0.0], e) for e in range(3)]
    with pytest.raises(ConfigError):
        select_pool(ctxs[0], ctxs, 0)
    with pytest.raises(ConfigError):
        select_pool(ctxs[0], ctxs, 4)


def test_zero_init_pool_is_lowest_ids():
    ctxs = [fin(np.zeros(3), e) for e in range(6)]
    for target in ctxs:
        assert [m.env_id for m in select_pool(target, ctxs, 3)] == [0, 1, 2]


def test_embedding_finite_passthrough():
    ctx = fin([0.1, -0.2])
    np.testing.assert_array_equal(context_embedding(ctx), [0.1, -0.2])


def test_embedding_functional_zero_weights():
    spec = MlpSpec((1, 3, 2), activation="swish")
    ctx = zero_context(0, spec=spec, aux_input="t")
    out = context_embedding(ctx, np.array([[0.7]]))
    assert not np.asarray(out).any()
    with pytest.raises(InputError):
        context_embedding(ctx)


def test_functional_context_size_check():
    spec = MlpSpec((1, 3, 2))
    with pytest.raises(KindError):
        Context(kind=FUNCTIONAL, values=np.zeros(3), env_id=0, spec=spec)
