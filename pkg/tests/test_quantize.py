import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from actcodec.errors import DegenerateScaleError, DomainError
from actcodec.quantize import (Int8Scales, QuantParams, dequantize_uniform, int8_input_scale,
                               int8_weight_scales, quantize_int8, quantize_uniform)


def test_endpoints_map_to_extremes():
    sym, p = quantize_uniform(np.array([0.0, 1.0]), 8)
    assert sym.tolist() == [0, 255] and p == QuantParams(0.0, 1.0, 8)


def test_half_rounds_away_from_zero():
    sym, _ = quantize_uniform(np.array([0.0, 0.5, 1.0]), 8)
    assert sym.tolist() == [0, 128, 255]


def test_constant_tensor():
    sym, p = quantize_uniform(np.array([3.0, 3.0]), 8)
    assert sym.tolist() == [0, 0] and (p.y_min, p.y_max) == (3.0, 3.0)
    np.testing.assert_array_equal(dequantize_uniform(np.array([0, 7, 255]), p), [3.0, 3.0, 3.0])


def test_dequantize_examples():
    p = QuantParams(0.0, 1.0, 8)
    np.testing.assert_array_equal(dequantize_uniform(np.array([0, 255]), p), [0.0, 1.0])
    assert dequantize_uniform(np.array([128]), p)[0] == pytest.approx(128 / 255, rel=1e-7)


def test_symbol_dtype_follows_bit_depth():
    assert quantize_uniform(np.array([0.0, 1.0]), 8)[0].dtype == np.uint8
    assert quantize_uniform(np.array([0.0, 1.0]), 12)[0].tolist() == [0, 4095]


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(DomainError):
        quantize_uniform(np.array([0.0, bad]), 8)


def test_out_of_range_symbol_rejected():
    with pytest.raises(DomainError):
        dequantize_uniform(np.array([256]), QuantParams(0.0, 1.0, 8))


@pytest.mark.parametrize("q", [1, 17])
def test_bit_depth_range(q):
    with pytest.raises(DomainError):
        quantize_uniform(np.array([0.0, 1.0]), q)


finite = st.floats(-1e4, 1e4, allow_nan=False, width=32)


@settings(max_examples=300, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, max_side=6), elements=finite),
       st.integers(2, 16))
def test_round_trip_within_half_step(y, q):
    sym, p = quantize_uniform(y, q)
    back = dequantize_uniform(sym, p)
    slack = np.spacing(np.float32(np.abs(y).max()))
    assert np.all(np.abs(back.astype(np.float64) - y) <= p.step / 2 * (1 + 1e-9) + slack)


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float32, st.integers(2, 50), elements=finite), st.integers(2, 16))
def test_monotone(y, q):
    sym, _ = quantize_uniform(y, q)
    order = np.argsort(y, kind="stable")
    assert np.all(np.diff(sym[order].astype(np.int64)) >= 0)


def test_int8_input_scale():
    assert int8_input_scale(np.array([-127.0, 3.0])) == 1.0
    assert int8_input_scale(np.array([2.54])) == pytest.approx(50.0)
    with pytest.raises(DegenerateScaleError):
        int8_input_scale(np.zeros(4))


def test_int8_weight_scales():
    assert int8_weight_scales(np.full((1, 1, 1, 1), 127.0)).tolist() == [1.0]
    w = np.zeros((2, 1, 2, 1), np.float32)
    w[0, 0, 1, 0] = -1.0
    w[1, 0, 0, 0] = 0.5
    assert int8_weight_scales(w).tolist() == [127.0, 254.0]
    with pytest.raises(DegenerateScaleError):
        int8_weight_scales(np.zeros((2, 1, 1, 1)) + np.array([1.0, 0.0])[:, None, None, None])


def test_quantize_int8_examples():
    assert quantize_int8(np.array([127.5]), 1.0).tolist() == [127]
    assert quantize_int8(np.array([0.0]), 1.0).tolist() == [0]
    assert quantize_int8(np.array([-300.0]), 1.0).tolist() == [-127]
    assert quantize_int8(np.array([-2.5, 2.5]), 1.0).tolist() == [-3, 3]


def test_quantize_int8_per_channel():
    w = np.ones((2, 1, 1, 1), np.float32)
    assert quantize_int8(w, np.array([10.0, 20.0])).ravel().tolist() == [10, 20]


@given(hnp.arrays(np.float32, st.integers(1, 40), elements=st.floats(-1e6, 1e6, width=32)),
       st.floats(1e-3, 1e3))
def test_int8_range(x, scale):
    out = quantize_int8(x, scale)
    assert out.dtype == np.int8 and out.min() >= -127 and out.max() <= 127


def test_scales_validated():
    with pytest.raises(DomainError):
        Int8Scales(0.0, np.array([1.0]))
    with pytest.raises(DomainError):
        Int8Scales(1.0, np.array([np.inf]))
