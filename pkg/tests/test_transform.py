import numpy as np
import pytest

from actcodec.errors import DomainError, ShapeError
from actcodec.transform import ChannelTransform, apply_forward, apply_inverse, fit_pca_transform


def pixel(v):
    return np.asarray(v, np.float32).reshape(-1, 1, 1)


def test_identity_is_exact_pass_through(rng):
    x = rng.normal(size=(5, 3, 4)).astype(np.float32)
    t = ChannelTransform.identity()
    assert np.array_equal(apply_forward(t, x), x)
    assert np.array_equal(apply_inverse(t, x), x)


def test_permutation():
    t = ChannelTransform.from_matrix([[0, 1], [1, 0]])
    assert apply_forward(t, pixel([3, 5])).ravel().tolist() == [5.0, 3.0]


def test_orthonormal_mix_and_inverse(rng):
    m = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    t = ChannelTransform.from_matrix(m)
    np.testing.assert_allclose(apply_forward(t, pixel([1, 1])).ravel(), [np.sqrt(2), 0.0], atol=1e-6)
    x = rng.normal(size=(2, 6, 7)).astype(np.float32)
    np.testing.assert_allclose(apply_inverse(t, apply_forward(t, x)), x, atol=1e-5)


def test_inverse_is_independent():
    fwd = np.eye(2)
    t = ChannelTransform("conv1x1", fwd, None, 2 * np.eye(2), np.array([1.0, 0.0]))
    assert apply_inverse(t, pixel([1, 2])).ravel().tolist() == [3.0, 4.0]


def test_bias_round_trip(rng):
    t = ChannelTransform.from_matrix(rng.normal(size=(3, 3)) + 3 * np.eye(3), bias=[1.0, -2.0, 0.5])
    x = rng.normal(size=(3, 4, 4)).astype(np.float32)
    np.testing.assert_allclose(apply_inverse(t, apply_forward(t, x)), x, atol=1e-4)


def test_channel_mismatch():
    t = ChannelTransform.from_matrix(np.eye(3))
    with pytest.raises(ShapeError):
        apply_forward(t, np.zeros((2, 1, 1), np.float32))
    with pytest.raises(ShapeError):
        apply_inverse(t, np.zeros((4, 1, 1), np.float32))


def test_dims_preserved(rng):
    t = ChannelTransform.from_matrix(rng.normal(size=(4, 4)))
    assert apply_forward(t, np.ones((4, 3, 9), np.float32)).shape == (4, 3, 9)


def test_save_load(tmp_path, rng):
    t = ChannelTransform.from_matrix(rng.normal(size=(3, 3)) + 2 * np.eye(3), bias=[1, 2, 3])
    t.save(tmp_path / "m.atns", tmp_path / "b.atns")
    u = ChannelTransform.load(tmp_path / "m.atns", tmp_path / "b.atns")
    np.testing.assert_array_equal(u.forward, t.forward)
    np.testing.assert_array_equal(u.forward_bias, t.forward_bias)
    v = ChannelTransform.load(tmp_path / "m.atns")
    assert not v.forward_bias.any()


def hadamard_samples():
    # four exactly orthogonal, zero-mean, unit-variance channel patterns
    h = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], np.float32)
    x = np.tile(h, (1, 8)).reshape(4, 4, 8)
    return [x, -x]


def test_pca_on_exactly_uncorrelated_channels_is_signed_permutation():
    t = fit_pca_transform(hadamard_samples())
    m = np.abs(t.forward)
    assert np.allclose(np.sort(m, axis=1)[:, :-1], 0, atol=1e-6)
    assert np.allclose(m.max(axis=1), 1, atol=1e-6)
    assert sorted(np.argmax(m, axis=1).tolist()) == [0, 1, 2, 3]


def test_pca_on_uncorrelated_distinct_variances(rng):
    scale = np.array([1.0, 4.0, 2.0])[:, None, None]
    samples = [(rng.normal(size=(3, 32, 32)) * scale).astype(np.float32) for _ in range(4)]
    m = fit_pca_transform(samples).forward
    # largest variance first, each row close to a unit axis
    assert np.argmax(np.abs(m), axis=1).tolist() == [1, 2, 0]
    assert np.all(np.abs(m).max(axis=1) > 0.99)


def test_pca_single_channel(rng):
    samples = [rng.normal(3.0, 2.0, size=(1, 5, 5)).astype(np.float32) for _ in range(2)]
    t = fit_pca_transform(samples)
    assert t.forward.tolist() == [[1.0]]
    mean = np.concatenate([s.ravel() for s in samples]).astype(np.float64).mean()
    assert t.forward_bias[0] == pytest.approx(-mean, rel=1e-6)


def test_pca_duplicate_channels_takes_degenerate_path(rng):
    a = rng.normal(size=(1, 8, 8))
    samples = [np.concatenate([a, a, rng.normal(size=(1, 8, 8))]).astype(np.float32) + i for i in range(3)]
    t = fit_pca_transform(samples)
    np.testing.assert_allclose(t.forward @ t.forward.T, np.eye(3), atol=1e-5)
    # the null direction of the duplicated pair is (1, -1, 0) / sqrt(2)
    null = np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
    assert np.max(np.abs(t.forward @ null)) == pytest.approx(1.0, abs=1e-5)


def test_pca_properties(rng):
    mix = rng.normal(size=(6, 6))
    samples = [np.einsum("ij,jhw->ihw", mix, rng.normal(size=(6, 10, 10))).astype(np.float32) + 5
               for _ in range(3)]
    t = fit_pca_transform(samples)
    np.testing.assert_allclose(t.forward @ t.forward.T, np.eye(6), atol=1e-5)
    for s in samples:
        back = t.apply_inverse(t.apply_forward(s))
        assert np.linalg.norm(back - s) / np.linalg.norm(s) < 1e-4
    y = np.concatenate([t.apply_forward(s).reshape(6, -1) for s in samples], axis=1)
    cov = np.cov(y)
    off = cov - np.diag(np.diag(cov))
    assert np.abs(off).max() < 1e-3 * np.abs(np.diag(cov)).max()


def test_pca_preconditions(rng):
    with pytest.raises(DomainError):
        fit_pca_transform([np.ones((2, 2, 2), np.float32)])
    with pytest.raises(ShapeError):
        fit_pca_transform([np.ones((2, 2, 2), np.float32), np.ones((3, 2, 2), np.float32)])
    with pytest.raises(DomainError):
        fit_pca_transform([np.ones((4, 1, 1), np.float32)] * 4)
