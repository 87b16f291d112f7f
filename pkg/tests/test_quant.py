import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinyvib.quant import (
    QuantParams,
    QuantTensor,
    calibrate,
    dequantize,
    multiply_by_quantized,
    quantize,
    quantize_bias,
    quantize_multiplier,
    requantize,
    round_half_away,
)

qparams = st.builds(
    QuantParams,
    st.floats(1e-4, 10.0),
    st.integers(-128, 127),
)


class TestCalibrate:
    def test_symmetric_unit_range(self):
        qp = calibrate(np.linspace(-1, 1, 11), symmetric=True)
        assert qp.scale == 1 / 127 and qp.zero_point == 0

    def test_all_zero(self):
        assert calibrate(np.zeros(10)) == QuantParams(1e-8, 0)
        assert calibrate(np.zeros(10), symmetric=True) == QuantParams(1e-8, 0)

    def test_asymmetric_byte_range(self):
        qp = calibrate(np.array([0.0, 17.0, 255.0]))
        assert qp.scale == 1.0 and qp.zero_point == -128

    def test_asymmetric_min_maps_to_lowest_code(self):
        qp = calibrate(np.array([-3.0, 5.0]))
        assert qp.scale == pytest.approx(8 / 255)
        assert quantize(np.array([-3.0]), qp).values[0] == -128
        assert quantize(np.array([5.0]), qp).values[0] == 127

    def test_range_always_contains_zero(self):
        qp = calibrate(np.array([2.0, 3.0]))
        assert quantize(np.array([0.0]), qp).values[0] == qp.zero_point
        assert dequantize(quantize(np.array([3.0]), qp))[0] == pytest.approx(3.0, abs=qp.scale / 2)

    @pytest.mark.parametrize("bad", [[], [np.nan], [1.0, np.inf]])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            calibrate(np.array(bad))


class TestQuantize:
    def test_zero_maps_to_zero_point(self):
        qp = QuantParams(0.05, -17)
        assert quantize(np.array(0.0), qp).values == -17

    def test_endpoint(self):
        qp = QuantParams(0.02, 0)
        assert quantize(np.array([127 * 0.02]), qp).values[0] == 127

    def test_ties_away_from_zero(self):
        qp = QuantParams(1.0, 0)
        assert quantize(np.array([0.5, -0.5, 1.5, -2.5]), qp).values.tolist() == [1, -1, 2, -3]
        assert round_half_away(np.array([2.5, -2.5, 0.49])).tolist() == [3.0, -3.0, 0.0]

    def test_saturation(self):
        qp = QuantParams(0.1, 10)
        assert quantize(np.array([1e6, -1e6]), qp).values.tolist() == [127, -128]

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            quantize(np.array([1.0, np.nan]), QuantParams(1.0, 0))

    def test_dequantize_examples(self):
        assert dequantize(QuantTensor(np.array([-128], np.int8), QuantParams(0.1, -128)))[0] == 0.0
        assert dequantize(QuantTensor(np.array([5], np.int8), QuantParams(0.3, 5)))[0] == 0.0

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            QuantParams(0.0, 0)
        with pytest.raises(ValueError):
            QuantParams(1.0, 128)

    @settings(max_examples=100, deadline=None)
    @given(qparams, st.integers(0, 2**31))
    def test_roundtrip_bound(self, qp, seed):
        lo, hi = qp.range
        x = np.random.default_rng(seed).uniform(lo, hi, 1000)
        err = np.abs(dequantize(quantize(x, qp)) - x)
        assert err.max() <= qp.scale / 2

    @settings(max_examples=100, deadline=None)
    @given(qparams, st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=50))
    def test_monotone(self, qp, xs):
        xs = np.sort(np.array(xs))
        q = quantize(xs, qp).values.astype(int)
        assert np.all(np.diff(q) >= 0)

    @settings(max_examples=100, deadline=None)
    @given(qparams)
    def test_grid_points_are_fixed(self, qp):
        codes = np.arange(-128, 128, dtype=np.int8)
        qt = QuantTensor(codes, qp)
        assert quantize(dequantize(qt), qp) == qt


class TestFixedPoint:
    @pytest.mark.parametrize("real", [1e-6, 0.0012345, 0.25, 0.5, 0.75, 0.999999999, 1.0, 3.7])
    def test_multiplier_representation(self, real):
        m, shift = quantize_multiplier(real)
        assert 2**30 <= m < 2**31
        assert m * 2.0 ** (shift - 31) == pytest.approx(real, rel=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(-(2**31) + 1, 2**31 - 1), st.floats(1e-7, 0.99))
    def test_rescale_matches_float(self, acc, real):
        m, shift = quantize_multiplier(real)
        got = int(multiply_by_quantized(np.array([acc]), m, shift)[0])
        exact = acc * m / 2.0 ** (31 - shift)
        assert abs(got - exact) <= 0.5 + 1e-9
        assert abs(got - acc * real) <= 1.0

    def test_requantize_relu_and_clamp(self):
        m, shift = quantize_multiplier(0.01)
        out = requantize(np.array([-100000, 0, 1000, 100000]), m, shift, zero_point=-20, relu=True)
        assert out.tolist() == [-20, -20, -10, 127]

    def test_bias(self):
        b = quantize_bias(np.array([0.5, -0.25]), 0.1, 0.01)
        assert b.dtype == np.int32 and b.tolist() == [500, -250]
