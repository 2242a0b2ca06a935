"""Software emulation of reduced-precision binary floating-point formats.

Values of an emulated format are carried around as ordinary float64 numbers
that happen to lie exactly on the format's grid.  Every emulated operation
is performed by computing the exact result in float64 and rounding once
with :func:`quantize`.  This yields correctly rounded arithmetic for every
format handled here: sums and products of two values with <= 11-bit
significands are exact in float64, and for wider formats (up to 24-bit
significands) the float64 intermediate has more than 2p+2 significand bits,
which makes the double rounding innocuous.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "OverflowPolicy",
    "FloatFormat",
    "FP8_E4M3",
    "FP16",
    "FP32",
    "FORMATS",
    "quantize",
    "unit_roundoff",
    "rounded_add",
    "rounded_mul",
    "encode",
    "decode",
    "quantize_count_saturated",
]


class OverflowPolicy(enum.Enum):
    """What happens to magnitudes beyond the largest finite value.

    ``SATURATE_TO_MAX_FINITE`` also implies an E4M3-style encoding: the
    top exponent carries normal numbers and only the all-ones mantissa
    pattern is NaN (there are no infinities).  ``TO_INFINITY`` implies the
    IEEE layout where the top exponent is reserved for inf/NaN.
    """

    SATURATE_TO_MAX_FINITE = "saturate"
    TO_INFINITY = "infinity"


@dataclass(frozen=True)
class FloatFormat:
    """Descriptor of an emulated binary floating-point format.

    ``mantissa_bits`` counts stored bits, excluding the implicit leading
    one.  ``exponent_bias`` is subtracted from the stored exponent field.
    """

    name: str
    exponent_bits: int
    mantissa_bits: int
    exponent_bias: int
    overflow_policy: OverflowPolicy = OverflowPolicy.TO_INFINITY
    supports_subnormals: bool = True

    def __post_init__(self) -> None:
        if self.exponent_bits < 2:
            raise ValueError("exponent_bits must be >= 2")
        if not 1 <= self.mantissa_bits <= 24:
            # float64 working arithmetic guarantees correct rounding only
            # up to 24 stored mantissa bits (innocuous double rounding).
            raise ValueError("mantissa_bits must be in [1, 24]")
        if abs(self.exponent_bias) > 512:
            raise ValueError("exponent_bias out of supported range")

    @property
    def unit_roundoff(self) -> float:
        return 2.0 ** -(self.mantissa_bits + 1)

    @property
    def min_normal_exponent(self) -> int:
        return 1 - self.exponent_bias

    @property
    def max_exponent(self) -> int:
        top = (1 << self.exponent_bits) - 1
        if self.overflow_policy is OverflowPolicy.TO_INFINITY:
            top -= 1  # all-ones exponent reserved for inf/NaN
        return top - self.exponent_bias

    @property
    def max_finite(self) -> float:
        if self.overflow_policy is OverflowPolicy.TO_INFINITY:
            frac = 2.0 - 2.0**-self.mantissa_bits
        else:
            # all-ones mantissa in the top binade encodes NaN
            frac = 2.0 - 2.0 ** (1 - self.mantissa_bits)
        return frac * 2.0**self.max_exponent

    @property
    def min_normal(self) -> float:
        return 2.0**self.min_normal_exponent

    @property
    def min_subnormal(self) -> float:
        return 2.0 ** (self.min_normal_exponent - self.mantissa_bits)

    @property
    def total_bits(self) -> int:
        return 1 + self.exponent_bits + self.mantissa_bits

    def __str__(self) -> str:
        return self.name


FP8_E4M3 = FloatFormat(
    "fp8_e4m3", 4, 3, 7, OverflowPolicy.SATURATE_TO_MAX_FINITE, True
)
FP16 = FloatFormat("fp16", 5, 10, 15, OverflowPolicy.TO_INFINITY, True)
FP32 = FloatFormat("fp32", 8, 23, 127, OverflowPolicy.TO_INFINITY, True)

FORMATS: dict[str, FloatFormat] = {f.name: f for f in (FP8_E4M3, FP16, FP32)}


def unit_roundoff(fmt: FloatFormat) -> float:
    """Unit roundoff u = 2^-(mantissa_bits+1) of ``fmt``."""
    return fmt.unit_roundoff


def round_params(fmt: FloatFormat) -> tuple[int, int, float, int, int]:
    """Scalar parameters consumed by the low-level rounding kernels."""
    return (
        fmt.mantissa_bits,
        fmt.min_normal_exponent,
        fmt.max_finite,
        int(fmt.overflow_policy is OverflowPolicy.SATURATE_TO_MAX_FINITE),
        int(fmt.supports_subnormals),
    )


def round_to_format(
    x: np.ndarray,
    mbits: int,
    emin: int,
    maxf: float,
    saturate: int,
    subnormals: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Round ``x`` to the described grid (nearest, ties to even).

    Returns the rounded array and a mask of overflow clamps.  This is the
    reference semantics that the compiled kernels replicate scalar-wise.
    """
    with np.errstate(invalid="ignore", over="ignore"):
        _, ex = np.frexp(np.abs(x))
        e = np.maximum(ex - 1, emin)
        scale = np.ldexp(1.0, mbits - e)
        y = np.rint(x * scale) / scale

        if not subnormals:
            min_normal = 2.0**emin
            tiny = (np.abs(y) < min_normal) & (y != 0.0)
            if np.any(tiny):
                half = min_normal / 2.0
                y = np.where(
                    tiny,
                    np.where(np.abs(x) > half, np.copysign(min_normal, x), x * 0.0),
                    y,
                )

        over = np.abs(y) > maxf  # NaN compares False, so propagates
        if np.any(over):
            if saturate:
                y = np.where(over, np.copysign(maxf, x), y)
            else:
                y = np.where(over, np.copysign(np.inf, x), y)
    return y, over


def _quantize_array(x: np.ndarray, fmt: FloatFormat) -> tuple[np.ndarray, np.ndarray]:
    return round_to_format(x, *round_params(fmt))


def quantize(x, fmt: FloatFormat):
    """Nearest representable value in ``fmt``, ties to even.

    Accepts scalars or arrays (returning the same kind).  NaN propagates;
    magnitudes beyond ``fmt.max_finite`` (including infinite inputs under a
    saturating policy) follow ``fmt.overflow_policy``.  Idempotent.
    """
    arr = np.asarray(x, dtype=np.float64)
    y, _ = _quantize_array(arr, fmt)
    if arr.ndim == 0:
        return float(y)
    return y


def quantize_count_saturated(x, fmt: FloatFormat) -> tuple[np.ndarray, int]:
    """Like :func:`quantize` on an array, also returning the clamp count."""
    y, over = _quantize_array(np.asarray(x, dtype=np.float64), fmt)
    return y, int(np.count_nonzero(over))


def _check_representable(value: float, fmt: FloatFormat, label: str) -> None:
    if not np.isnan(value) and quantize(value, fmt) != value:
        raise ValueError(f"{label}={value!r} is not representable in {fmt.name}")


def rounded_add(a: float, b: float, fmt: FloatFormat) -> float:
    """fmt-rounded sum of two fmt-representable scalars."""
    if __debug__:
        _check_representable(a, fmt, "a")
        _check_representable(b, fmt, "b")
    return quantize(np.float64(a) + np.float64(b), fmt)


def rounded_mul(a: float, b: float, fmt: FloatFormat) -> float:
    """fmt-rounded product of two fmt-representable scalars."""
    if __debug__:
        _check_representable(a, fmt, "a")
        _check_representable(b, fmt, "b")
    return quantize(np.float64(a) * np.float64(b), fmt)


def decode(codes, fmt: FloatFormat) -> np.ndarray:
    """Map integer bit patterns of ``fmt`` to their float64 values."""
    c = np.asarray(codes, dtype=np.uint64)
    if np.any(c >> fmt.total_bits):
        raise ValueError(f"code out of range for {fmt.total_bits}-bit format")
    m = fmt.mantissa_bits
    man = (c & ((1 << m) - 1)).astype(np.float64)
    biased = ((c >> m) & ((1 << fmt.exponent_bits) - 1)).astype(np.int64)
    sign = np.where((c >> (fmt.total_bits - 1)) & 1, -1.0, 1.0)

    sub = biased == 0
    exp = np.where(sub, fmt.min_normal_exponent, biased - fmt.exponent_bias)
    sig = np.where(sub, man, man + (1 << m)) * 2.0**-m
    val = sign * sig * np.exp2(exp.astype(np.float64))

    top = biased == (1 << fmt.exponent_bits) - 1
    if fmt.overflow_policy is OverflowPolicy.TO_INFINITY:
        val = np.where(top & (man == 0), sign * np.inf, val)
        val = np.where(top & (man != 0), np.nan, val)
    else:
        val = np.where(top & (man == (1 << m) - 1), np.nan, val)
    return val if val.ndim else float(val)


def encode(values, fmt: FloatFormat) -> np.ndarray:
    """Inverse of :func:`decode` for exactly representable values.

    NaN maps to the canonical quiet-NaN pattern; raises on values that are
    not fixed points of ``quantize``.
    """
    v = np.atleast_1d(np.asarray(values, dtype=np.float64))
    m = fmt.mantissa_bits
    out = np.zeros(v.shape, dtype=np.uint64)

    nan = np.isnan(v)
    inf = np.isinf(v)
    zero = v == 0.0
    regular = ~(nan | inf | zero)

    sign = np.signbit(v).astype(np.uint64) << (fmt.total_bits - 1)

    av = np.where(regular, np.abs(v), 1.0)
    _, ex = np.frexp(av)
    e = np.maximum(ex - 1, fmt.min_normal_exponent)
    man_f = av * np.ldexp(1.0, m - e)  # significand scaled to integer grid
    sub = av < fmt.min_normal
    biased = np.where(sub, 0, e + fmt.exponent_bias).astype(np.uint64)
    man = np.where(sub, man_f, man_f - (1 << m))

    bad = regular & (
        (man != np.floor(man))
        | (man < 0)
        | (man >= (1 << m))
        | (np.abs(v) > fmt.max_finite)
        | (biased >= (1 << fmt.exponent_bits)) & ~sub
    )
    if np.any(bad):
        raise ValueError(
            f"value {v[bad].flat[0]!r} is not representable in {fmt.name}"
        )

    out = np.where(regular, sign | (biased << m) | man.astype(np.uint64), out)
    out = np.where(zero, sign, out)

    top = np.uint64(((1 << fmt.exponent_bits) - 1) << m)
    if fmt.overflow_policy is OverflowPolicy.TO_INFINITY:
        out = np.where(inf, sign | top, out)
        out = np.where(nan, top | np.uint64(1 << (m - 1)), out)
    else:
        if np.any(inf):
            raise ValueError(f"{fmt.name} has no infinities")
        out = np.where(nan, top | np.uint64((1 << m) - 1), out)

    out = out.astype(np.uint8 if fmt.total_bits <= 8 else np.uint16)
    if np.asarray(values).ndim == 0:
        return out[0]
    return out


@lru_cache(maxsize=8)
def accumulation_tables(fmt: FloatFormat):
    """Exhaustive rounded-add / rounded-mul tables for an 8-bit format.

    Returns ``(add, mul, sat_add, values)`` where ``add`` and ``mul`` are
    flat uint8 arrays of length 65536 indexed by ``(a_code << 8) | b_code``,
    ``sat_add`` is a uint8 flag table marking additions that clamped at the
    overflow boundary, and ``values`` decodes codes to float64.
    """
    if fmt.total_bits != 8:
        raise ValueError("accumulation tables only exist for 8-bit formats")
    vals = decode(np.arange(256, dtype=np.uint64), fmt)
    a = vals[:, None]
    b = vals[None, :]
    sums, sat = _quantize_array(a + b, fmt)
    prods, _ = _quantize_array(a * b, fmt)
    add = encode(sums.ravel(), fmt).astype(np.uint8)
    mul = encode(prods.ravel(), fmt).astype(np.uint8)
    return add, mul, sat.ravel().astype(np.uint8), vals
