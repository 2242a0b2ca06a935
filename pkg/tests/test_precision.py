"""Emulated floating-point formats: exhaustive and property checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixprec.precision import (
    FP8_E4M3,
    FP16,
    FP32,
    FloatFormat,
    OverflowPolicy,
    accumulation_tables,
    decode,
    encode,
    quantize,
    rounded_add,
    rounded_mul,
    unit_roundoff,
)

FORMATS = [FP8_E4M3, FP16, FP32]


def e4m3_value(code: int) -> float:
    """Independent E4M3 decoder following the OCP bit layout."""
    sign = -1.0 if code & 0x80 else 1.0
    exp = (code >> 3) & 0xF
    frac = code & 0x7
    if exp == 0xF and frac == 0x7:
        return float("nan")
    if exp == 0:
        return sign * (frac / 8.0) * 2.0**-6
    return sign * (1 + frac / 8.0) * 2.0 ** (exp - 7)


@pytest.fixture(scope="module")
def e4m3_values():
    return np.array([e4m3_value(c) for c in range(256)])


class TestFormatDescriptors:
    def test_unit_roundoff(self):
        assert unit_roundoff(FP8_E4M3) == 2.0**-4 == 0.0625
        assert unit_roundoff(FP16) == 2.0**-11
        assert unit_roundoff(FP32) == 2.0**-24

    def test_ranges(self):
        assert FP8_E4M3.max_finite == 448.0
        assert FP8_E4M3.min_normal == 2.0**-6
        assert FP8_E4M3.min_subnormal == 2.0**-9
        assert FP16.max_finite == 65504.0
        assert FP32.max_finite == pytest.approx(3.4028234663852886e38)

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            FloatFormat("bad", 1, 3, 0)
        with pytest.raises(ValueError):
            FloatFormat("bad", 4, 0, 7)
        with pytest.raises(ValueError):
            FloatFormat("bad", 4, 25, 7)


class TestDecodeAgainstIndependentEnumeration:
    def test_all_256_codes(self, e4m3_values):
        got = decode(np.arange(256, dtype=np.uint64), FP8_E4M3)
        same = (got == e4m3_values) | (np.isnan(got) & np.isnan(e4m3_values))
        assert same.all()

    def test_encode_roundtrip(self, e4m3_values):
        nonnan = ~np.isnan(e4m3_values)
        codes = np.arange(256, dtype=np.uint64)[nonnan].astype(np.uint8)
        assert np.array_equal(encode(e4m3_values[nonnan], FP8_E4M3), codes)

    def test_negative_zero_keeps_sign_bit(self):
        assert encode(-0.0, FP8_E4M3) == 0x80
        assert encode(0.0, FP8_E4M3) == 0x00

    def test_encode_rejects_unrepresentable(self):
        with pytest.raises(ValueError):
            encode(3.1, FP8_E4M3)
        with pytest.raises(ValueError):
            encode(float("inf"), FP8_E4M3)  # saturating format has no inf


class TestQuantize:
    def test_zero_is_representable(self):
        assert quantize(0.0, FP8_E4M3) == 0.0

    def test_nearest_in_binade(self):
        # spacing in [2, 4) is 0.25; 3.1 sits between 3.0 and 3.25
        assert quantize(3.1, FP8_E4M3) == 3.0

    def test_saturation_to_max_finite(self):
        assert quantize(1000.0, FP8_E4M3) == 448.0
        assert quantize(-1000.0, FP8_E4M3) == -448.0
        assert quantize(float("inf"), FP8_E4M3) == 448.0

    def test_fp16_overflow_to_infinity(self):
        # IEEE overflow threshold: maxf + half ulp = 65520
        assert quantize(65519.9, FP16) == 65504.0
        assert math.isinf(quantize(65520.0, FP16))

    def test_exhaustive_fixed_points(self, e4m3_values):
        q = quantize(e4m3_values, FP8_E4M3)
        same = (q == e4m3_values) | (np.isnan(q) & np.isnan(e4m3_values))
        assert same.all()

    def test_nan_propagates(self):
        for fmt in FORMATS:
            assert math.isnan(quantize(float("nan"), fmt))

    def test_ties_to_even(self):
        # midpoints in [1, 2) with spacing 0.125
        assert quantize(1.0625, FP8_E4M3) == 1.0  # between 1.0 and 1.125
        assert quantize(1.1875, FP8_E4M3) == 1.25  # between 1.125 and 1.25

    def test_subnormal_range(self):
        # subnormal quantum is 2^-9
        assert quantize(2.0**-9, FP8_E4M3) == 2.0**-9
        assert quantize(2.0**-10, FP8_E4M3) == 0.0  # tie rounds to even (zero)
        assert quantize(1.1 * 2.0**-10, FP8_E4M3) == 2.0**-9

    def test_subnormals_disabled_flushes(self):
        fmt = FloatFormat("e4m3fnz", 4, 3, 7,
                          OverflowPolicy.SATURATE_TO_MAX_FINITE, False)
        below_half = 0.4 * fmt.min_normal
        above_half = 0.6 * fmt.min_normal
        assert quantize(below_half, fmt) == 0.0
        assert quantize(above_half, fmt) == fmt.min_normal
        assert quantize(-above_half, fmt) == -fmt.min_normal

    @given(st.floats(min_value=-1e5, max_value=1e5), st.floats(min_value=-1e5, max_value=1e5))
    @settings(max_examples=300)
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        for fmt in (FP8_E4M3, FP16):
            assert quantize(lo, fmt) <= quantize(hi, fmt)

    @given(st.floats(min_value=-448, max_value=448))
    @settings(max_examples=300)
    def test_sign_symmetry(self, x):
        assert quantize(-x, FP8_E4M3) == -quantize(x, FP8_E4M3)

    @given(st.floats(min_value=2.0**-6, max_value=448.0))
    @settings(max_examples=300)
    def test_relative_error_in_normal_range(self, x):
        for sign in (x, -x):
            q = quantize(sign, FP8_E4M3)
            assert abs(q - sign) <= FP8_E4M3.unit_roundoff * abs(sign)

    @given(st.floats(allow_nan=False, allow_infinity=False, width=64))
    @settings(max_examples=300)
    def test_idempotent(self, x):
        for fmt in (FP8_E4M3, FP16):
            q = quantize(x, fmt)
            assert quantize(q, fmt) == q


class TestRoundedOps:
    def test_add_identity(self):
        assert rounded_add(1.0, 0.0, FP8_E4M3) == 1.0

    def test_add_rounds_to_even_neighbor(self):
        # spacing at 1.0 is 0.125; 1.0625 is the midpoint
        assert rounded_add(1.0, 0.0625, FP8_E4M3) == 1.0

    def test_mul_exact(self):
        assert rounded_mul(2.0, 3.0, FP8_E4M3) == 6.0

    def test_rejects_unrepresentable_operands(self):
        with pytest.raises(ValueError):
            rounded_add(3.1, 0.0, FP8_E4M3)

    def test_nan_propagates(self):
        assert math.isnan(rounded_add(float("nan"), 1.0, FP8_E4M3))

    def test_overflow_policies(self):
        assert rounded_add(448.0, 448.0, FP8_E4M3) == 448.0
        assert math.isinf(rounded_mul(448.0, 448.0, FP16))


class TestAccumulationTables:
    def test_tables_match_rounded_ops(self, e4m3_values):
        add, mul, sat, vals = accumulation_tables(FP8_E4M3)
        rng = np.random.default_rng(7)
        finite = np.flatnonzero(np.isfinite(vals))
        for _ in range(500):
            a, b = rng.choice(finite, size=2)
            va, vb = vals[a], vals[b]
            assert vals[add[(a << 8) | b]] == rounded_add(va, vb, FP8_E4M3)
            assert vals[mul[(a << 8) | b]] == rounded_mul(va, vb, FP8_E4M3)

    def test_nan_codes_propagate(self):
        add, mul, _, vals = accumulation_tables(FP8_E4M3)
        nan_code = 0x7F
        assert np.isnan(vals[add[(nan_code << 8) | 1]])
        assert np.isnan(vals[mul[(1 << 8) | nan_code]])

    def test_saturation_flags(self):
        add, _, sat, vals = accumulation_tables(FP8_E4M3)
        c448 = int(encode(448.0, FP8_E4M3))
        c1 = int(encode(1.0, FP8_E4M3))
        assert sat[(c448 << 8) | c448] == 1  # 896 clamps
        assert sat[(c1 << 8) | c1] == 0

    def test_only_8bit_formats(self):
        with pytest.raises(ValueError):
            accumulation_tables(FP16)
