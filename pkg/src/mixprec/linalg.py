"""Matrix-vector multiply-accumulate with configurable accumulation precision.

Accumulation is strictly sequential in index order and every product and
partial sum is rounded to the accumulation format (no fused multiply-add).
The rowwise backward error of :func:`mma_row` is therefore bounded by
n*u to first order, with strict bound (1+u)^n - 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import backends
from .precision import (
    FloatFormat,
    accumulation_tables,
    encode,
    quantize,
    round_params,
)

__all__ = [
    "Matrix",
    "Vector",
    "SaturationCounter",
    "DimensionError",
    "mma",
    "mma_row",
    "mma_mixed",
    "abs_mma",
    "mma_values",
    "mma_values_batch",
    "mma_values_pairs",
]


class DimensionError(ValueError):
    """Operand shapes do not chain."""


class SaturationCounter:
    """Accumulates the number of overflow clamps seen by the kernels."""

    def __init__(self) -> None:
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)

    def __repr__(self) -> str:
        return f"SaturationCounter(count={self.count})"


def _check_representable(data: np.ndarray, fmt: FloatFormat) -> None:
    q = quantize(data, fmt)
    ok = (q == data) | (np.isnan(data) & np.isnan(q))
    if not np.all(ok):
        bad = data[~ok].flat[0]
        raise ValueError(f"entry {bad!r} is not representable in {fmt.name}")


@dataclass(frozen=True)
class Vector:
    """1-d array of values exactly representable in ``fmt``."""

    data: np.ndarray
    fmt: FloatFormat

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 1:
            raise DimensionError("Vector data must be 1-d")
        _check_representable(arr, self.fmt)
        object.__setattr__(self, "data", arr)

    def __len__(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class Matrix:
    """Row-major matrix of values exactly representable in ``fmt``.

    For 8-bit storage formats the encoded byte codes are cached so the
    table-driven kernels can run without re-encoding per call.
    """

    data: np.ndarray
    fmt: FloatFormat
    _codes: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError("Matrix data must be 2-d")
        _check_representable(arr, self.fmt)
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def codes(self) -> np.ndarray:
        if self.fmt.total_bits != 8:
            raise ValueError("codes are only defined for 8-bit storage formats")
        if self._codes is None:
            c = np.ascontiguousarray(
                encode(self.data.ravel(), self.fmt).reshape(self.data.shape)
            )
            object.__setattr__(self, "_codes", c)
        return self._codes


@lru_cache(maxsize=8)
def _encode_table(fmt: FloatFormat) -> tuple[np.ndarray, np.ndarray]:
    _, _, _, vals = accumulation_tables(fmt)
    finite = np.isfinite(vals)
    order = np.argsort(vals[finite], kind="stable")
    return vals[finite][order], np.flatnonzero(finite).astype(np.uint8)[order]


def _fast_encode(values: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    """Encode exactly-representable finite values via the decode table."""
    sorted_vals, sorted_codes = _encode_table(fmt)
    idx = np.searchsorted(sorted_vals, values)
    return np.ascontiguousarray(sorted_codes[idx])


def _codes_path_ok(W: np.ndarray, w_fmt, x_fmt, acc_fmt: FloatFormat) -> bool:
    return (
        acc_fmt.total_bits == 8
        and w_fmt == acc_fmt
        and x_fmt == acc_fmt
    )


def mma_values(
    W: np.ndarray,
    x: np.ndarray,
    acc_fmt: FloatFormat,
    *,
    w_fmt: FloatFormat | None = None,
    x_fmt: FloatFormat | None = None,
    w_codes: np.ndarray | None = None,
    saturation: SaturationCounter | None = None,
) -> np.ndarray:
    """Sequential rounded W @ x on raw arrays.

    ``w_fmt``/``x_fmt`` declare the storage formats of the operands; when
    both equal an 8-bit ``acc_fmt`` the exhaustive-table kernel is used
    (unless a saturation counter is requested, which routes through the
    counting kernel; results are identical either way).
    """
    if W.shape[1] != x.shape[0]:
        raise DimensionError(f"W has {W.shape[1]} columns but x has {x.shape[0]}")
    kern = backends.get_backend()
    if saturation is None and _codes_path_ok(W, w_fmt, x_fmt, acc_fmt):
        add, mul, _, vals = accumulation_tables(acc_fmt)
        if w_codes is None:
            w_codes = _fast_encode(W.ravel(), acc_fmt).reshape(W.shape)
        out_codes = kern.mma_codes(w_codes, _fast_encode(x, acc_fmt), add, mul)
        return vals[out_codes]
    out, sat = kern.mma_fmt(
        np.ascontiguousarray(W), np.ascontiguousarray(x), *round_params(acc_fmt)
    )
    if saturation is not None:
        saturation.add(sat)
    return out


def mma_values_batch(
    W: np.ndarray,
    X: np.ndarray,
    acc_fmt: FloatFormat,
    *,
    w_fmt: FloatFormat | None = None,
    x_fmt: FloatFormat | None = None,
    w_codes: np.ndarray | None = None,
    saturation: SaturationCounter | None = None,
) -> np.ndarray:
    """Batched :func:`mma_values`; X rows are inputs, result is (B, rows)."""
    if W.shape[1] != X.shape[1]:
        raise DimensionError(f"W has {W.shape[1]} columns but X has {X.shape[1]}")
    kern = backends.get_backend()
    if saturation is None and _codes_path_ok(W, w_fmt, x_fmt, acc_fmt):
        add, mul, _, vals = accumulation_tables(acc_fmt)
        if w_codes is None:
            w_codes = _fast_encode(W.ravel(), acc_fmt).reshape(W.shape)
        xc = _fast_encode(X.ravel(), acc_fmt).reshape(X.shape)
        return vals[kern.mma_codes_batch(w_codes, xc, add, mul)]
    out, sat = kern.mma_fmt_batch(
        np.ascontiguousarray(W), np.ascontiguousarray(X), *round_params(acc_fmt)
    )
    if saturation is not None:
        saturation.add(sat)
    return out


def mma_values_pairs(
    W: np.ndarray,
    X: np.ndarray,
    b_idx: np.ndarray,
    r_idx: np.ndarray,
    acc_fmt: FloatFormat,
    *,
    saturation: SaturationCounter | None = None,
) -> np.ndarray:
    """Recompute selected (input, row) pairs of the batched product."""
    kern = backends.get_backend()
    out, sat = kern.mma_fmt_pairs(
        np.ascontiguousarray(W),
        np.ascontiguousarray(X),
        np.ascontiguousarray(b_idx, dtype=np.int64),
        np.ascontiguousarray(r_idx, dtype=np.int64),
        *round_params(acc_fmt),
    )
    if saturation is not None:
        saturation.add(sat)
    return out


def mma(
    W: Matrix,
    x: Vector,
    acc_fmt: FloatFormat,
    saturation: SaturationCounter | None = None,
) -> Vector:
    """Rounded matrix-vector product; output entries representable in acc_fmt."""
    w_codes = (
        W.codes
        if saturation is None and _codes_path_ok(W.data, W.fmt, x.fmt, acc_fmt)
        else None
    )
    out = mma_values(
        W.data,
        x.data,
        acc_fmt,
        w_fmt=W.fmt,
        x_fmt=x.fmt,
        w_codes=w_codes,
        saturation=saturation,
    )
    return Vector(out, acc_fmt)


def mma_row(
    row,
    x,
    acc_fmt: FloatFormat,
    saturation: SaturationCounter | None = None,
) -> float:
    """Rounded inner product of one row with x."""
    r = row.data if isinstance(row, Vector) else np.asarray(row, dtype=np.float64)
    xv = x.data if isinstance(x, Vector) else np.asarray(x, dtype=np.float64)
    out = mma_values(r[None, :], xv, acc_fmt, saturation=saturation)
    return float(out[0])


def mma_mixed(
    W: Matrix,
    x: Vector,
    mask: np.ndarray,
    low: FloatFormat,
    high: FloatFormat,
    saturation: SaturationCounter | None = None,
) -> Vector:
    """Per-row precision splice: masked rows accumulate in ``high``.

    Each side is bitwise identical to the corresponding uniform call.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[0] != W.rows:
        raise DimensionError("mask length must equal the number of rows")
    out = mma(W, x, low, saturation=saturation).data.copy()
    idx = np.flatnonzero(mask)
    if idx.size:
        hi = mma_values(W.data[idx], x.data, high, saturation=saturation)
        out[idx] = hi
    # a spliced vector is representable in `high` for nested format pairs
    return Vector(out, high if idx.size else low)


def abs_mma(W: Matrix, x: Vector) -> np.ndarray:
    """|W| @ |x| accumulated in float64 (analysis-only, deterministic order)."""
    if W.cols != len(x):
        raise DimensionError(f"W has {W.cols} columns but x has {len(x)}")
    return np.einsum("ij,j->i", np.abs(W.data), np.abs(x.data))
