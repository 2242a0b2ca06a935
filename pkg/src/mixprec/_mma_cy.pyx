# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False
"""Compiled kernels for sequential rounded multiply-accumulate.

Scalar rounding reproduces ``precision.round_to_format`` exactly: compute
the exact product/sum in float64, round once to the target grid with
round-to-nearest-ties-to-even, then apply the overflow policy.  Rows (or
batch entries) are parallelized with OpenMP; the per-row accumulation
order stays strictly sequential, so results are independent of the thread
count.  Four independent rows are interleaved in the hot loops to hide
the latency of the rounding chain.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport INFINITY, fabs, isnan, rint
from libc.string cimport memcpy

cnp.import_array()

NAME = "compiled"


cdef inline double _pow2(int e) noexcept nogil:
    # 2^e for biased-normal exponents only (guaranteed by the callers)
    cdef unsigned long long bits = (<unsigned long long>(e + 1023)) << 52
    cdef double out
    memcpy(&out, &bits, 8)
    return out


cdef inline double _round1(double x, int mbits, int emin, double maxf,
                           bint saturate, bint subnormals, long* clamps) noexcept nogil:
    cdef unsigned long long bits
    cdef int e
    cdef double y, min_normal, half
    memcpy(&bits, &x, 8)
    e = <int>((bits >> 52) & 0x7FF) - 1023  # floor(log2|x|); -1023 if subnormal
    if e < emin:
        e = emin  # fixed quantum below the normal range (also covers x == 0)
    elif e > 1023:
        e = 1023  # inf and NaN flow through the scaling unchanged
    # scale by the exact power of two 2^(mbits - e); both factors stay normal
    y = rint(x * _pow2(mbits - e)) * _pow2(e - mbits)
    if not subnormals:
        min_normal = _pow2(emin)
        if y != 0.0 and fabs(y) < min_normal:
            half = min_normal * 0.5
            if fabs(x) > half:
                y = min_normal if x > 0.0 else -min_normal
            else:
                y = x * 0.0
    if fabs(y) > maxf:  # false for NaN, which propagates untouched
        clamps[0] += 1
        if saturate:
            y = maxf if x > 0.0 else -maxf
        else:
            y = INFINITY if x > 0.0 else -INFINITY
    return y


cdef inline double _accum_row(const double* w, const double* x, Py_ssize_t n,
                              int mbits, int emin, double maxf,
                              bint saturate, bint subnormals, long* clamps) noexcept nogil:
    cdef Py_ssize_t j
    cdef double acc = 0.0, p
    for j in range(n):
        p = _round1(w[j] * x[j], mbits, emin, maxf, saturate, subnormals, clamps)
        acc = _round1(acc + p, mbits, emin, maxf, saturate, subnormals, clamps)
    return acc


cdef inline void _accum_quad(const double* w0, const double* w1,
                             const double* w2, const double* w3,
                             const double* x, double* out, Py_ssize_t n,
                             int mbits, int emin, double maxf,
                             bint saturate, bint subnormals, long* clamps) noexcept nogil:
    # four independent accumulation chains over a shared input vector
    cdef Py_ssize_t j
    cdef double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0, xj
    for j in range(n):
        xj = x[j]
        a0 = _round1(a0 + _round1(w0[j] * xj, mbits, emin, maxf, saturate, subnormals, clamps),
                     mbits, emin, maxf, saturate, subnormals, clamps)
        a1 = _round1(a1 + _round1(w1[j] * xj, mbits, emin, maxf, saturate, subnormals, clamps),
                     mbits, emin, maxf, saturate, subnormals, clamps)
        a2 = _round1(a2 + _round1(w2[j] * xj, mbits, emin, maxf, saturate, subnormals, clamps),
                     mbits, emin, maxf, saturate, subnormals, clamps)
        a3 = _round1(a3 + _round1(w3[j] * xj, mbits, emin, maxf, saturate, subnormals, clamps),
                     mbits, emin, maxf, saturate, subnormals, clamps)
    out[0] = a0
    out[1] = a1
    out[2] = a2
    out[3] = a3


cdef inline void _accum_block(const double* W, Py_ssize_t n, Py_ssize_t i0,
                              Py_ssize_t i1, const double* x, double* out,
                              int mbits, int emin, double maxf,
                              bint saturate, bint subnormals, long* clamps) noexcept nogil:
    # rows [i0, i1) of W against x, quad-unrolled with scalar remainder
    cdef Py_ssize_t i = i0
    while i + 4 <= i1:
        _accum_quad(W + i * n, W + (i + 1) * n, W + (i + 2) * n, W + (i + 3) * n,
                    x, out + i, n, mbits, emin, maxf, saturate, subnormals, clamps)
        i += 4
    while i < i1:
        out[i] = _accum_row(W + i * n, x, n, mbits, emin, maxf,
                            saturate, subnormals, clamps)
        i += 1


def mma_fmt(const double[:, ::1] W, const double[::1] x,
            int mbits, int emin, double maxf, bint saturate, bint subnormals):
    """Rounded matrix-vector product: W (r, n) @ x (n,) -> (out (r,), clamps)."""
    cdef Py_ssize_t r = W.shape[0], n = W.shape[1]
    out = np.empty(r, dtype=np.float64)
    cdef double[::1] ov = out
    cdef long sat = 0
    cdef long loc_sat
    cdef Py_ssize_t blk, i0, i1
    cdef Py_ssize_t nblk = (r + 63) // 64
    with nogil:
        for blk in prange(nblk, schedule="static"):
            loc_sat = 0
            i0 = blk * 64
            i1 = min(i0 + 64, r)
            _accum_block(&W[0, 0], n, i0, i1, &x[0], &ov[0],
                         mbits, emin, maxf, saturate, subnormals, &loc_sat)
            sat += loc_sat
    return out, sat


def mma_fmt_batch(const double[:, ::1] W, const double[:, ::1] X,
                  int mbits, int emin, double maxf, bint saturate, bint subnormals):
    """Batched variant: X holds one input per row, result is (B, rows)."""
    cdef Py_ssize_t r = W.shape[0], n = W.shape[1], B = X.shape[0]
    out = np.empty((B, r), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef long sat = 0
    cdef long loc_sat
    cdef Py_ssize_t b
    with nogil:
        for b in prange(B, schedule="static"):
            loc_sat = 0
            _accum_block(&W[0, 0], n, 0, r, &X[b, 0], &ov[b, 0],
                         mbits, emin, maxf, saturate, subnormals, &loc_sat)
            sat += loc_sat
    return out, sat


def mma_fmt_pairs(const double[:, ::1] W, const double[:, ::1] X,
                  const long long[::1] b_idx, const long long[::1] r_idx,
                  int mbits, int emin, double maxf, bint saturate, bint subnormals):
    """Selected (input, row) pairs of the batched product, one value each."""
    cdef Py_ssize_t k = b_idx.shape[0], n = W.shape[1]
    out = np.empty(k, dtype=np.float64)
    cdef double[::1] ov = out
    cdef long sat = 0
    cdef long loc_sat
    cdef Py_ssize_t blk, t, t1
    cdef Py_ssize_t nblk = (k + 3) // 4
    with nogil:
        for blk in prange(nblk, schedule="static"):
            loc_sat = 0
            t = blk * 4
            t1 = min(t + 4, k)
            if t1 - t == 4 and b_idx[t] == b_idx[t + 1] == b_idx[t + 2] == b_idx[t + 3]:
                # common case: four rows of the same input
                _accum_quad(&W[r_idx[t], 0], &W[r_idx[t + 1], 0],
                            &W[r_idx[t + 2], 0], &W[r_idx[t + 3], 0],
                            &X[b_idx[t], 0], &ov[t], n,
                            mbits, emin, maxf, saturate, subnormals, &loc_sat)
            else:
                while t < t1:
                    ov[t] = _accum_row(&W[r_idx[t], 0], &X[b_idx[t], 0], n,
                                       mbits, emin, maxf, saturate, subnormals,
                                       &loc_sat)
                    t = t + 1
            sat += loc_sat
    return out, sat


def mma_codes(const unsigned char[:, ::1] Wc, const unsigned char[::1] xc,
              const unsigned char[::1] add_tab, const unsigned char[::1] mul_tab):
    """Table-driven 8-bit path; operands and result are format codes."""
    cdef Py_ssize_t r = Wc.shape[0], n = Wc.shape[1]
    out = np.empty(r, dtype=np.uint8)
    cdef unsigned char[::1] ov = out
    cdef Py_ssize_t i, j
    cdef unsigned int acc, p
    with nogil:
        for i in prange(r, schedule="static"):
            acc = 0  # code of +0.0
            for j in range(n):
                p = mul_tab[(<unsigned int>Wc[i, j] << 8) | xc[j]]
                acc = add_tab[(acc << 8) | p]
            ov[i] = <unsigned char>acc
    return out


cdef inline void _codes_quad(const unsigned char* w0, const unsigned char* w1,
                             const unsigned char* w2, const unsigned char* w3,
                             const unsigned char* x, unsigned char* out, Py_ssize_t n,
                             const unsigned char* add_tab,
                             const unsigned char* mul_tab) noexcept nogil:
    cdef Py_ssize_t j
    cdef unsigned int a0 = 0, a1 = 0, a2 = 0, a3 = 0, xj
    for j in range(n):
        xj = x[j]
        a0 = add_tab[(a0 << 8) | mul_tab[(<unsigned int>w0[j] << 8) | xj]]
        a1 = add_tab[(a1 << 8) | mul_tab[(<unsigned int>w1[j] << 8) | xj]]
        a2 = add_tab[(a2 << 8) | mul_tab[(<unsigned int>w2[j] << 8) | xj]]
        a3 = add_tab[(a3 << 8) | mul_tab[(<unsigned int>w3[j] << 8) | xj]]
    out[0] = <unsigned char>a0
    out[1] = <unsigned char>a1
    out[2] = <unsigned char>a2
    out[3] = <unsigned char>a3


def mma_codes_batch(const unsigned char[:, ::1] Wc, const unsigned char[:, ::1] Xc,
                    const unsigned char[::1] add_tab, const unsigned char[::1] mul_tab):
    cdef Py_ssize_t r = Wc.shape[0], n = Wc.shape[1], B = Xc.shape[0]
    out = np.empty((B, r), dtype=np.uint8)
    cdef unsigned char[:, ::1] ov = out
    cdef Py_ssize_t b, i, j
    cdef unsigned int acc, p
    with nogil:
        for b in prange(B, schedule="static"):
            i = 0
            while i + 4 <= r:
                _codes_quad(&Wc[i, 0], &Wc[i + 1, 0], &Wc[i + 2, 0], &Wc[i + 3, 0],
                            &Xc[b, 0], &ov[b, i], n, &add_tab[0], &mul_tab[0])
                i = i + 4
            while i < r:
                acc = 0
                for j in range(n):
                    p = mul_tab[(<unsigned int>Wc[i, j] << 8) | Xc[b, j]]
                    acc = add_tab[(acc << 8) | p]
                ov[b, i] = <unsigned char>acc
                i = i + 1
    return out
