import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import ShadowStore, random_rotation, unit

from protomem.core import ZeroVector
from protomem.memory import DuplicateClass, MissingClass, PrototypeStore, blend, generate_prototype

S2 = 0.70710678


@pytest.mark.parametrize(
    "embeddings, expected",
    [
        ([(1, 0), (0, 1)], (S2, S2)),
        ([(1, 0)] * 4, (1, 0)),
        # mean is (0.6, 0.6)
        ([(0.6, 0.8), (1, 0), (0, 1), (0.8, 0.6)], (S2, S2)),
    ],
)
def test_generate_prototype(embeddings, expected):
    np.testing.assert_allclose(generate_prototype(embeddings), expected, atol=1e-8)


def test_generate_prototype_antipodal_is_zero_vector():
    with pytest.raises(ZeroVector):
        generate_prototype([(1, 0), (-1, 0)])


def store_with(capacity, *ids):
    store = PrototypeStore(capacity, 2)
    for step, c in enumerate(ids, 1):
        store.enqueue(c, unit([1.0, step]), step)
    return store


def test_enqueue_fifo_eviction():
    store = PrototypeStore(2, 2)
    assert not store.enqueue(0, (1, 0), 1)
    assert not store.enqueue(1, (0, 1), 2)
    report = store.enqueue(2, (1, 1), 3)
    assert report.evicted == 0
    assert store.class_ids() == [2, 1]


def test_refresh_protects_from_eviction():
    store = PrototypeStore(2, 2)
    store.enqueue(0, (1, 0), 1)
    store.enqueue(1, (0, 1), 2)
    store.refresh(0, (0, 1), 0.2, 3)
    assert store.enqueue(2, (1, 1), 4).evicted == 1


def test_enqueue_under_capacity_reports_nothing():
    store = store_with(3, 5, 6)
    assert store.enqueue(7, (1, 0), 10).evicted is None


def test_enqueue_duplicate_raises():
    store = store_with(3, 5)
    with pytest.raises(DuplicateClass):
        store.enqueue(5, (1, 0), 2)


def test_refresh_examples():
    store = PrototypeStore(3, 2)
    store.enqueue(0, (1, 0), 1)
    np.testing.assert_allclose(store.refresh(0, (0, 1), 0.2, 2), (0.97014250, 0.24253563), atol=1e-8)

    store.enqueue(1, unit([0.3, 0.4]), 3)
    before = store.get(1)
    assert np.array_equal(store.refresh(1, (0, 1), 0.0, 4), before)

    store.enqueue(2, (1, 0), 5)
    assert np.array_equal(store.refresh(2, (0.0, 1.0), 1.0, 6), (0.0, 1.0))


def test_refresh_missing_raises():
    with pytest.raises(MissingClass):
        PrototypeStore(2, 2).refresh(3, (1, 0), 0.5, 1)


def test_refresh_zero_blend_leaves_entry():
    store = store_with(2, 0)
    before = store.get(0)
    with pytest.raises(ZeroVector):
        store.refresh(0, -before, 0.5, 5)
    assert np.array_equal(store.get(0), before)
    assert store.last_refresh_step(0) == 1


def test_apply_gradients_examples():
    store = PrototypeStore(3, 2)
    store.enqueue(0, (1, 0), 1)
    store.enqueue(1, (0, 1), 2)
    snap = store.snapshot_weights()
    store.apply_gradients([(0, np.array([5.0, 5.0]))], 0.0)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(snap, store.snapshot_weights()))

    order = store.class_ids()
    store.apply_gradients([(0, np.array([0.0, -1.0]))], 1.0)
    np.testing.assert_allclose(store.get(0), (S2, S2), atol=1e-8)
    assert store.class_ids() == order

    with pytest.raises(MissingClass):
        store.apply_gradients([(9, np.zeros(2))], 0.1)


def test_snapshot_examples():
    assert PrototypeStore(2, 2).snapshot_weights() == []
    store = store_with(3, 10, 11)
    snap = store.snapshot_weights()
    assert [c for c, _ in snap] == [11, 10]
    copy = [v.copy() for _, v in snap]
    store.refresh(10, (0, 1), 0.5, 9)
    assert all(np.array_equal(a, b) for a, (_, b) in zip(copy, snap))


def run_random_ops(capacity, n_ops, seed, dim=3):
    """Drive the store and a brute-force shadow with the same random operations."""
    rng = np.random.default_rng(seed)
    store = PrototypeStore(capacity, dim)
    shadow = ShadowStore(capacity)
    n_classes = max(3, 3 * capacity)
    for step in range(1, n_ops + 1):
        op = rng.random()
        c = int(rng.integers(n_classes))
        vec = unit(rng.standard_normal(dim))
        if op < 0.6:
            if c in store:
                r = float(rng.choice([0.0, 0.2, 1.0]))
                store.refresh(c, vec, r, step)
                shadow.refresh(c, vec, r, step)
            else:
                expected = shadow.enqueue(c, vec, step)
                assert store.enqueue(c, vec, step).evicted == expected
        elif len(store):
            ids = store.class_ids()
            chosen = rng.choice(ids, size=min(len(ids), 3), replace=False)
            grads = [(int(k), rng.standard_normal(dim)) for k in chosen]
            store.apply_gradients(grads, 0.1)
            for k, g in grads:
                for e in shadow.entries:
                    if e[0] == k:
                        e[1] = unit(e[1] - 0.1 * g)
        assert len(store) <= capacity
        assert store.class_ids() == shadow.head_first()
        _, weights = store.snapshot_matrix()
        assert np.all(np.abs(np.sqrt(np.einsum("ij,ij->i", weights, weights)) - 1.0) < 1e-6)
    for e in shadow.entries:
        np.testing.assert_allclose(store.get(e[0]), e[1], atol=1e-9)


@pytest.mark.parametrize("capacity", [1, 2, 7, 64])
def test_random_ops_match_shadow(capacity):
    run_random_ops(capacity, 2000, seed=capacity)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_random_ops_property(capacity, seed):
    run_random_ops(capacity, 200, seed)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_refresh_rotation_equivariant(seed, r):
    rng = np.random.default_rng(seed)
    q = random_rotation(5, rng)
    p_mem, p_new = unit(rng.standard_normal(5)), unit(rng.standard_normal(5))
    np.testing.assert_allclose(blend(q @ p_mem, q @ p_new, r), q @ blend(p_mem, p_new, r), atol=1e-9)


def test_refresh_endpoints_exact(rng):
    for _ in range(100):
        p_mem, p_new = unit(rng.standard_normal(7)), unit(rng.standard_normal(7))
        assert np.array_equal(blend(p_mem, p_new, 0.0), p_mem)
        assert np.array_equal(blend(p_mem, p_new, 1.0), p_new)


def test_checkpoint_round_trip(rng):
    store = PrototypeStore(5, 4)
    for step in range(1, 9):
        c = int(rng.integers(8))
        if c in store:
            store.refresh(c, unit(rng.standard_normal(4)), 0.3, step)
        else:
            store.enqueue(c, unit(rng.standard_normal(4)), step)
    data = store.to_bytes()
    assert len(data) == 24 + len(store) * (16 + 8 * 4)
    back = PrototypeStore.from_bytes(data)
    assert back.class_ids() == store.class_ids()
    assert (back.capacity, back.dim) == (5, 4)
    for c in store.class_ids():
        assert np.array_equal(back.get(c), store.get(c))
        assert back.last_refresh_step(c) == store.last_refresh_step(c)
    assert back.to_bytes() == data


def test_checkpoint_header_layout():
    store = PrototypeStore(3, 2)
    store.enqueue(7, (1.0, 0.0), 11)
    data = store.to_bytes()
    assert data[:24] == (2).to_bytes(8, "little") + (3).to_bytes(8, "little") + (1).to_bytes(8, "little")
    assert data[24:40] == (7).to_bytes(8, "little") + (11).to_bytes(8, "little")
    assert np.frombuffer(data[40:], "<f8").tolist() == [1.0, 0.0]
