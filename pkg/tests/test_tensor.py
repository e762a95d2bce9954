import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import bilinear_loop, pad_loop
from semdiff.tensor import (
    as_feature_map,
    bilinear_upsample,
    bilinear_upsample_backward,
    concat_channels,
    crop,
    pad_replicate,
    pad_replicate_backward,
)

finite = st.floats(-100, 100, allow_nan=False)


def feature_maps(max_c=3, max_hw=6):
    shape = st.tuples(st.integers(1, max_c), st.integers(1, max_hw), st.integers(1, max_hw))
    return shape.flatmap(lambda s: arrays(np.float64, s, elements=finite))


def test_zero_extent_rejected():
    with pytest.raises(ValueError):
        as_feature_map(np.zeros((0, 3, 3)))
    with pytest.raises(ValueError):
        as_feature_map(np.zeros((3, 3)))


def test_pad_margin_zero_is_identity():
    x = np.random.default_rng(0).standard_normal((2, 3, 4))
    np.testing.assert_array_equal(pad_replicate(x, 0), x)


def test_pad_constant_stays_constant():
    out = pad_replicate(np.full((1, 3, 3), 2.5), 2)
    assert out.shape == (1, 7, 7)
    assert np.all(out == 2.5)


def test_pad_hand_case():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    expected = np.array(pad_loop(x.tolist(), 1))
    np.testing.assert_array_equal(pad_replicate(x, 1), expected)
    np.testing.assert_array_equal(
        expected[0], [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
    )


def test_pad_negative_margin_rejected():
    with pytest.raises(ValueError):
        pad_replicate(np.ones((1, 2, 2)), -1)


@given(feature_maps(), st.integers(0, 4))
def test_pad_then_crop_is_identity(x, margin):
    np.testing.assert_array_equal(crop(pad_replicate(x, margin), margin), x)


@settings(max_examples=30)
@given(feature_maps(), st.integers(0, 7))
def test_pad_backward_is_adjoint(x, margin):
    rng = np.random.default_rng(1)
    g = rng.standard_normal((x.shape[0], x.shape[1] + 2 * margin, x.shape[2] + 2 * margin))
    lhs = np.sum(pad_replicate(x, margin) * g)
    rhs = np.sum(x * pad_replicate_backward(g, margin))
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_bilinear_identity_and_constants():
    x = np.random.default_rng(0).standard_normal((2, 3, 5))
    np.testing.assert_array_equal(bilinear_upsample(x, 3, 5), x)
    const = bilinear_upsample(np.full((1, 3, 3), -1.25), 8, 11)
    np.testing.assert_allclose(const, -1.25, rtol=0, atol=1e-15)


def test_bilinear_hand_case():
    x = np.array([[[0.0, 1.0], [2.0, 3.0]]])
    out = bilinear_upsample(x, 4, 4)
    np.testing.assert_allclose(out, np.array(bilinear_loop(x.tolist(), 4, 4)), atol=1e-15)
    # plane 2*y + x sampled at clamped coordinates (0, .25, .75, 1)
    s = np.array([0.0, 0.25, 0.75, 1.0])
    np.testing.assert_allclose(out[0], 2 * s[:, None] + s[None, :], atol=1e-15)


def test_bilinear_rejects_downsampling():
    with pytest.raises(ValueError):
        bilinear_upsample(np.ones((1, 4, 4)), 2, 4)


@settings(max_examples=40)
@given(feature_maps(max_hw=5), st.integers(0, 6), st.integers(0, 6))
def test_bilinear_stays_within_input_range(x, dh, dw):
    out = bilinear_upsample(x, x.shape[1] + dh, x.shape[2] + dw)
    tol = 1e-12 * max(1.0, np.abs(x).max())
    assert out.min() >= x.min() - tol
    assert out.max() <= x.max() + tol
    np.testing.assert_allclose(out, np.array(bilinear_loop(x.tolist(), *out.shape[1:])), atol=tol)


@settings(max_examples=30)
@given(feature_maps(max_hw=5), st.integers(0, 6), st.integers(0, 6))
def test_bilinear_backward_is_adjoint(x, dh, dw):
    out_h, out_w = x.shape[1] + dh, x.shape[2] + dw
    g = np.random.default_rng(2).standard_normal((x.shape[0], out_h, out_w))
    lhs = np.sum(bilinear_upsample(x, out_h, out_w) * g)
    rhs = np.sum(x * bilinear_upsample_backward(g, *x.shape[1:]))
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_concat_shapes_and_order():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((2, 4, 4)), rng.standard_normal((3, 4, 4))
    out = concat_channels(a, b)
    assert out.shape == (5, 4, 4)
    np.testing.assert_array_equal(out[0], a[0])
    np.testing.assert_array_equal(out[2], b[0])
    np.testing.assert_array_equal(out[:2], a)
    np.testing.assert_array_equal(out[2:], b)


def test_concat_rejects_spatial_mismatch_and_empty():
    with pytest.raises(ValueError):
        concat_channels(np.ones((1, 4, 4)), np.ones((1, 2, 2)))
    with pytest.raises(ValueError):
        concat_channels(np.ones((1, 4, 4)), np.ones((0, 4, 4)))
