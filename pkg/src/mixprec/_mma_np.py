"""NumPy kernels for sequential rounded multiply-accumulate.

Fallback backend: identical semantics to the compiled extension, with the
j-loop over input components in Python and everything else vectorized.
Accumulation is strictly sequential in index order; every product and every
partial sum is rounded to the accumulation format.
"""

from __future__ import annotations

import numpy as np

from .precision import round_to_format

NAME = "numpy"


def _step(acc, prod_exact, params):
    p, over_p = round_to_format(prod_exact, *params)
    acc, over_a = round_to_format(acc + p, *params)
    return acc, int(np.count_nonzero(over_p)) + int(np.count_nonzero(over_a))


def mma_fmt(W, x, mbits, emin, maxf, saturate, subnormals):
    """Rounded matrix-vector product: W (r, n) @ x (n,) -> (out (r,), clamps)."""
    params = (mbits, emin, maxf, saturate, subnormals)
    acc = np.zeros(W.shape[0])
    sat = 0
    for j in range(W.shape[1]):
        acc, s = _step(acc, W[:, j] * x[j], params)
        sat += s
    return acc, sat


def mma_fmt_batch(W, X, mbits, emin, maxf, saturate, subnormals):
    """Batched variant: X holds one input per row, result is (B, rows)."""
    params = (mbits, emin, maxf, saturate, subnormals)
    acc = np.zeros((X.shape[0], W.shape[0]))
    sat = 0
    for j in range(W.shape[1]):
        acc, s = _step(acc, np.multiply.outer(X[:, j], W[:, j]), params)
        sat += s
    return acc, sat


def mma_fmt_pairs(W, X, b_idx, r_idx, mbits, emin, maxf, saturate, subnormals):
    """Selected (input, row) pairs of the batched product, one value each."""
    params = (mbits, emin, maxf, saturate, subnormals)
    rows = W[r_idx]
    xs = X[b_idx]
    acc = np.zeros(len(b_idx))
    sat = 0
    for j in range(W.shape[1]):
        acc, s = _step(acc, rows[:, j] * xs[:, j], params)
        sat += s
    return acc, sat


def mma_codes(Wc, xc, add_tab, mul_tab):
    """Table-driven 8-bit path; operands and result are format codes."""
    acc = np.zeros(Wc.shape[0], dtype=np.int32)
    wc = Wc.astype(np.int32)
    for j in range(Wc.shape[1]):
        p = mul_tab[(wc[:, j] << 8) | int(xc[j])].astype(np.int32)
        acc = add_tab[(acc << 8) | p].astype(np.int32)
    return acc.astype(np.uint8)


def mma_codes_batch(Wc, Xc, add_tab, mul_tab):
    B, r = Xc.shape[0], Wc.shape[0]
    acc = np.zeros((B, r), dtype=np.int32)
    wc = Wc.astype(np.int32)
    xc = Xc.astype(np.int32)
    for j in range(Wc.shape[1]):
        p = mul_tab[np.bitwise_or.outer(xc[:, j], wc[:, j] << 8)].astype(np.int32)
        acc = add_tab[(acc << 8) | p].astype(np.int32)
    return acc.astype(np.uint8)
