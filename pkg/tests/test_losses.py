import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import central_diff, naive_cosface, naive_dsoftmax, random_rotation, rel_error, unit

from protomem.core import LossConfig, normalize_rows
from protomem.losses import (
    MissingTarget,
    cosface_backward,
    cosface_forward,
    dsoftmax_backward,
    dsoftmax_forward,
    dsoftmax_split,
    loss_and_grad,
)

LOG1P_EXP_M1 = 0.31326169


def test_cosface_single_class_is_zero():
    assert cosface_forward([[0.3]], [0], 64.0, 0.4) == pytest.approx(0.0, abs=1e-12)


def test_cosface_hand_value():
    assert cosface_forward([[1.0, 0.0]], [0], 1.0, 0.0) == pytest.approx(LOG1P_EXP_M1, abs=1e-8)


def test_dsoftmax_hand_value():
    assert dsoftmax_forward([[1.0]], [0], 1.0, 0.0) == pytest.approx(LOG1P_EXP_M1, abs=1e-8)


def test_missing_target():
    with pytest.raises(MissingTarget):
        cosface_forward([[0.1, 0.2]], [-1], 1.0, 0.0)
    with pytest.raises(MissingTarget):
        dsoftmax_forward([[0.1, 0.2]], [2], 1.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.9), st.floats(0.01, 0.09))
def test_cosface_margin_monotone(seed, m, dm):
    cos = np.random.default_rng(seed).uniform(-1, 1, size=(3, 6))
    targets = [0, 2, 5]
    assert cosface_forward(cos, targets, 8.0, m + dm) > cosface_forward(cos, targets, 8.0, m)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.001, 0.2))
def test_cosface_decreases_with_target_cosine(seed, bump):
    cos = np.random.default_rng(seed).uniform(-1, 0.7, size=(1, 5))
    up = cos.copy()
    up[0, 1] += bump
    assert cosface_forward(up, [1], 16.0, 0.2) < cosface_forward(cos, [1], 16.0, 0.2)


def test_dsoftmax_term_structure():
    s, d = 16.0, 0.5
    intra, inter = dsoftmax_split([[0.5, 0.1, -0.3]], [0], s, d)
    assert intra[0] == pytest.approx(math.log(2.0), abs=1e-12)

    base = np.array([[0.2, 0.1, -0.3]])
    moved = base.copy()
    moved[0, 0] = 0.6
    i0, e0 = dsoftmax_split(base, [0], s, d)
    i1, e1 = dsoftmax_split(moved, [0], s, d)
    assert i1[0] < i0[0]
    assert e1[0] == e0[0]


def test_cosface_saturated_gradient_vanishes():
    x = unit([1.0, 2.0, -1.0])
    protos = np.stack([x, -x, -x])
    g = cosface_backward(x[None, :] * 3.0, protos, [0], 64.0, 0.4)
    assert np.linalg.norm(g.d_embedding) < 1e-6


def test_symmetric_cosines_prototype_grads_parallel_to_x(rng):
    # prototypes on a cone around x, so every cosine is the same
    x = unit(rng.standard_normal(6))
    c = 0.3
    protos = []
    for _ in range(5):
        v = rng.standard_normal(6)
        v = unit(v - (v @ x) * x)
        protos.append(c * x + math.sqrt(1 - c * c) * v)
    protos = np.array(protos)
    g = cosface_backward(x[None, :], protos, [2], 8.0, 0.0)
    total = g.d_prototypes.sum(axis=0)
    assert np.linalg.norm(total - (total @ x) * x) < 1e-12
    for row in g.d_prototypes:
        assert np.linalg.norm(row - (row @ x) * x) < 1e-12


def test_dsoftmax_no_negatives_only_target_gradient(rng):
    x = rng.standard_normal((2, 4))
    p = normalize_rows(rng.standard_normal((1, 4)))
    g = dsoftmax_backward(x, p, [0, 0], 16.0, 0.5)
    assert g.d_prototypes.shape == (1, 4)
    assert np.linalg.norm(g.d_prototypes[0]) > 0
    assert set(g.prototype_grads([42])) == {42}


def test_dsoftmax_saturated_intra_gradient():
    # cos_y = 1 exactly: only the intra term's slope remains, s * eps e^{-s} / (1 + eps e^{-s})
    s, d = 32.0, 0.9
    eps = math.exp(d * s)
    x = unit([1.0, 1.0, 0.0])
    g = dsoftmax_backward(x[None, :] * 0.999999, x[None, :], [0], s, d)
    expected = s * eps * math.exp(-s) / (1 + eps * math.exp(-s))
    np.testing.assert_allclose(g.d_prototypes[0], -expected * x, rtol=1e-9)


def random_instance(rng, n=3, dim=8, m=32):
    raw = rng.standard_normal((n, dim)) * rng.uniform(0.5, 2.0, size=(n, 1))
    protos = normalize_rows(rng.standard_normal((m, dim)))
    targets = rng.integers(m, size=n)
    return raw, protos, targets


LOSSES = [
    ("cosface", naive_cosface, 0.35),
    ("dsoftmax", naive_dsoftmax, 0.6),
]


@pytest.mark.parametrize("name, oracle, param", LOSSES)
def test_forward_matches_loop_oracle(rng, name, oracle, param):
    cfg = LossConfig(name=name, s=64.0, m=param if name == "cosface" else 0.4, d=param if name == "dsoftmax" else 0.9)
    for _ in range(20):
        raw, protos, targets = random_instance(rng)
        g = loss_and_grad(cfg, raw, protos, targets)
        assert g.loss == pytest.approx(oracle(raw, protos, targets, 64.0, param), rel=1e-10)


@pytest.mark.parametrize("name, oracle, param", LOSSES)
def test_gradients_match_finite_differences(name, oracle, param):
    rng = np.random.default_rng(2024)
    s = 4.0
    backward = cosface_backward if name == "cosface" else dsoftmax_backward
    worst = 0.0
    for _ in range(100):
        raw, protos, targets = random_instance(rng)
        g = backward(raw, protos, targets, s, param)
        num_x = central_diff(lambda r: oracle(r, protos, targets, s, param), raw)
        num_p = central_diff(lambda p: oracle(raw, p, targets, s, param), protos)
        worst = max(worst, rel_error(g.d_embedding, num_x), rel_error(g.d_prototypes, num_p))
    assert worst < 1e-5


@pytest.mark.parametrize("name", ["cosface", "dsoftmax"])
def test_negative_permutation_invariance(rng, name):
    cfg = LossConfig(name=name, s=64.0)
    raw, protos, targets = random_instance(rng, n=4, m=10)
    base = loss_and_grad(cfg, raw, protos, targets).loss
    perm = rng.permutation(10)
    inverse = np.argsort(perm)
    shuffled = loss_and_grad(cfg, raw, protos[perm], inverse[targets]).loss
    assert abs(base - shuffled) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["cosface", "dsoftmax"]))
def test_rotation_invariance(seed, name):
    rng = np.random.default_rng(seed)
    cfg = LossConfig(name=name, s=64.0)
    raw, protos, targets = random_instance(rng, n=4, dim=6, m=7)
    q = random_rotation(6, rng)
    a = loss_and_grad(cfg, raw, protos, targets).loss
    b = loss_and_grad(cfg, raw @ q.T, protos @ q.T, targets).loss
    assert abs(a - b) < 1e-9


def test_clipped_cosines_pass_no_gradient():
    x = np.array([[1.0, 0.0]])
    # slightly over-unit prototype gives cos > 1, which is clipped
    p = np.array([[1.0 + 1e-9, 0.0], [0.0, 1.0]])
    g = cosface_backward(x, p, [0], 8.0, 0.2)
    assert g.cosines.max() <= 1.0
    assert np.all(g.d_prototypes[0] == 0.0)


def test_large_scale_is_finite(rng):
    raw, protos, targets = random_instance(rng)
    for name in ("cosface", "dsoftmax"):
        g = loss_and_grad(LossConfig(name=name, s=1000.0), raw, protos, targets)
        assert np.isfinite(g.loss)
        assert np.all(np.isfinite(g.d_embedding)) and np.all(np.isfinite(g.d_prototypes))
