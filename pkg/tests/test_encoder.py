import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import central_diff, rel_error

from protomem.core import ZeroVector
from protomem.data import SyntheticDataset, generate_dataset
from protomem.encoder import LinearEncoder, encoder_backward, encoder_forward, normalization_backward


def test_zero_noise_examples_equal_direction():
    ds = generate_dataset(5, 4, 6, 0.0, seed=1)
    for c in range(5):
        np.testing.assert_allclose(ds.examples[ds.class_examples[c]], np.tile(ds.directions[c], (4, 1)), atol=1e-15)


def test_dataset_deterministic_and_unit(tmp_path):
    a = generate_dataset(7, 5, 8, 0.3, seed=4, held_out_per_class=2)
    b = generate_dataset(7, 5, 8, 0.3, seed=4, held_out_per_class=2)
    assert np.array_equal(a.examples, b.examples) and np.array_equal(a.held_out, b.held_out)
    np.testing.assert_allclose(np.linalg.norm(a.examples, axis=1), 1.0, atol=1e-12)
    a.to_dir(tmp_path / "d")
    back = SyntheticDataset.from_dir(tmp_path / "d")
    assert np.array_equal(back.examples, a.examples)
    assert np.array_equal(back.labels, a.labels)
    assert np.array_equal(back.held_out_labels, a.held_out_labels)
    assert back.class_counts().tolist() == [5] * 7


def test_within_class_beats_between_class():
    ds = generate_dataset(2000, 20, 32, 0.3, seed=0)
    rng = np.random.default_rng(0)
    n = 20000
    c = rng.integers(2000, size=n)
    i = rng.integers(20, size=n)
    j = (i + rng.integers(1, 20, size=n)) % 20
    same = np.sum(ds.examples[c * 20 + i] * ds.examples[c * 20 + j], axis=1)
    other = (c + rng.integers(1, 2000, size=n)) % 2000
    diff = np.sum(ds.examples[c * 20 + i] * ds.examples[other * 20 + j], axis=1)
    assert same.mean() > diff.mean() + 0.15
    # two independent draws around mu: cos ~ 1 / (1 + sigma^2 D_in) for large D_in
    assert same.mean() == pytest.approx(1 / (1 + 0.09 * 32), abs=0.05)


def test_identity_encoder_passes_inputs(rng):
    x = rng.standard_normal((5, 4))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    np.testing.assert_allclose(encoder_forward(LinearEncoder(np.eye(4)), x), x, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_scale_invariance_and_unit_outputs(seed, c):
    rng = np.random.default_rng(seed)
    enc = LinearEncoder.random(6, 3, rng)
    x = rng.standard_normal((10, 6))
    out = enc(x)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(LinearEncoder(enc.weight * c)(x), out, atol=1e-9)


def test_zero_projection_raises():
    with pytest.raises(ZeroVector):
        LinearEncoder(np.zeros((2, 2)))(np.ones((1, 2)))


def test_backward_hand_case():
    enc = LinearEncoder(np.eye(2))
    x = np.array([[3.0, 4.0]])
    g = encoder_backward(enc, x, np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(g, [[0.384, -0.288], [0.512, -0.384]], atol=1e-12)

    def loss(w):
        return float(LinearEncoder(w)(x)[0, 0])

    np.testing.assert_allclose(g, central_diff(loss, enc.weight), atol=1e-9)


def test_backward_zero_upstream(rng):
    enc = LinearEncoder.random(5, 3, rng)
    assert np.all(encoder_backward(enc, rng.standard_normal((4, 5)), np.zeros((4, 3))) == 0)


def test_backward_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(20):
        enc = LinearEncoder.random(6, 4, rng)
        x = rng.standard_normal((5, 6))
        upstream = rng.standard_normal((5, 4))
        num = central_diff(lambda w: float(np.sum(upstream * LinearEncoder(w)(x))), enc.weight)
        worst = max(worst, rel_error(encoder_backward(enc, x, upstream), num))
    assert worst < 1e-5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normalization_gradient_orthogonal_to_output(seed):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((4, 5)) * rng.uniform(0.1, 10)
    d_raw = normalization_backward(raw, rng.standard_normal((4, 5)))
    unit = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    assert np.max(np.abs(np.sum(d_raw * unit, axis=1))) < 1e-12


def test_encoder_round_trip(tmp_path, rng):
    enc = LinearEncoder.random(3, 2, rng)
    enc.save(tmp_path / "w.bin")
    data = (tmp_path / "w.bin").read_bytes()
    assert len(data) == 16 + 8 * 6
    assert np.array_equal(LinearEncoder.load(tmp_path / "w.bin").weight, enc.weight)
