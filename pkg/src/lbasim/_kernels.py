"""Numba kernels for the quantized FMA and the chunked GEMM built from it.

The product inside FMAq is formed exactly as an unevaluated double-double
(TwoProduct) and the truncating quantizer looks at the low word to decide
whether the exact value lies just below the high word.  The accumulator adder
aligns the smaller addend to the larger one's ulp grid, dropping the bits that
fall off (no guard bits), then adds exactly.  Truncation masks mantissa bits of
the float64 carrier.

Quantizer parameters travel as ``(keep_mask, r_of, r_uf)`` triples, built by
:func:`quant_params`.
"""

from __future__ import annotations

import warnings

import numpy as np
from llvmlite import ir
from numba import njit, prange, types
from numba.extending import intrinsic

# numba probes an old system TBB when it starts its thread pool and then falls
# back to another threading layer; the warning is noise for users
warnings.filterwarnings("ignore", message="The TBB threading layer requires TBB")

# mask kinds understood by gemm_masks
MASK_RECURSIVE_OF = 1
MASK_IMMEDIATE_OF = 2
MASK_IMMEDIATE_DIFF = 3


@intrinsic
def _f2i(typingctx, x):
    if not isinstance(x, types.Float) or x.bitwidth != 64:
        return None

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], ir.IntType(64))

    return types.int64(types.float64), codegen


@intrinsic
def _i2f(typingctx, x):
    if not isinstance(x, types.Integer) or x.bitwidth != 64:
        return None

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], ir.DoubleType())

    return types.float64(types.int64), codegen


def quant_params(fmt):
    """``(keep_mask, r_of, r_uf)`` for a FloatFormat."""
    drop = 52 - fmt.M
    keep = ~((1 << drop) - 1)
    return np.int64(keep), float(fmt.r_of), float(fmt.r_uf)


@njit(inline="always")
def _split(a):
    c = 134217729.0 * a
    hi = c - (c - a)
    return hi, a - hi


@njit(inline="always")
def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, err


@njit(inline="always")
def _qtrunc(hi, lo, keep, r_of, r_uf, uf):
    """Truncate the exact value ``hi + lo``; returns (q, overflowed, underflowed)."""
    if hi == 0.0:
        return 0.0, False, False
    neg = hi < 0.0
    a = -hi if neg else hi
    if lo != 0.0 and ((lo < 0.0) != neg):
        # exact magnitude sits strictly between the previous double and |hi|
        a = _i2f(_f2i(a) - 1)
    if a >= r_of:
        q = r_of
        of = True
    elif uf and a < r_uf:
        return 0.0, False, True
    else:
        q = _i2f(_f2i(a) & keep)
        of = False
    return (-q if neg else q), of, False


@njit(inline="always")
def _align_add(a, b, keep):
    """Accumulator adder: the smaller addend is truncated toward zero onto the
    ulp grid of the larger one (``keep`` = accumulator mantissa mask) before an
    exact addition.  Bits shifted past the accumulator width are lost, so an
    addend smaller than one ulp of the other is swamped regardless of sign."""
    if abs(a) < abs(b):
        a, b = b, a
    if b == 0.0:
        return a
    ia = _f2i(abs(a))
    ib = _f2i(abs(b))
    gap = (ia >> 52) - (ib >> 52)
    if gap > 52:
        return a
    # accumulator mask moved down to the smaller operand's binade; once it no
    # longer covers the leading bit, the whole operand lies below one ulp
    keep_b = keep << gap
    if keep_b & (np.int64(1) << 52) == 0:
        return a
    bt = _i2f(ib & keep_b)
    return a + (bt if b > 0.0 else -bt)


@njit(inline="always")
def _qacc_add(a, b, ka, ofa, ufa, uf):
    h = _align_add(a, b, ka)
    return _qtrunc(h, 0.0, ka, ofa, ufa, uf)


@njit(inline="always")
def _fmaq(x, w, s, kp, ofp, ufp, ka, ofa, ufa, uf):
    """One FMAq step; returns (z, acc_overflow, prod_underflow, x*w rounded)."""
    ph, pl = _two_prod(x, w)
    qp, _, puf = _qtrunc(ph, pl, kp, ofp, ufp, uf)
    z, of, _ = _qacc_add(qp, s, ka, ofa, ufa, uf)
    return z, of, puf, ph


@njit(cache=True)
def fmaq_scalar(x, w, s, kp, ofp, ufp, ka, ofa, ufa, uf):
    z, of, puf, ph = _fmaq(x, w, s, kp, ofp, ufp, ka, ofa, ufa, uf)
    return z


@njit(cache=True)
def qadd_array(a, b, ka, ofa, ufa, uf):
    """Elementwise exact ``Q_acc(a + b)`` for same-shape 1-d arrays."""
    out = np.empty_like(a)
    for i in range(a.shape[0]):
        z, _, _ = _qacc_add(a[i], b[i], ka, ofa, ufa, uf)
        out[i] = z
    return out


@njit(cache=True)
def quantize_flat(x, drop, r_of, r_uf, uf, nearest, out):
    """Truncate or round-to-nearest-even ``x`` into ``out`` (both 1-D).

    Returns False without finishing when a nonzero double subnormal would need
    rounding; the caller then takes the slower general path.
    """
    keep = ~((np.int64(1) << drop) - 1)
    half = (np.int64(1) << (drop - 1)) - 1
    for i in range(x.shape[0]):
        v = x[i]
        a = abs(v)
        if a != a:
            out[i] = v
            continue
        if a >= r_of:
            q = r_of
        elif a == 0.0 or (uf and a < r_uf):
            out[i] = 0.0
            continue
        elif a < 2.2250738585072014e-308:
            return False
        else:
            bits = _f2i(a)
            if nearest:
                bits += half + ((bits >> drop) & 1)
            q = min(_i2f(bits & keep), r_of)
        out[i] = -q if v < 0.0 else q
    return True


@njit(cache=True)
def qtrunc_array(a, ka, ofa, ufa, uf):
    out = np.empty_like(a)
    for i in range(a.shape[0]):
        z, _, _ = _qtrunc(a[i], 0.0, ka, ofa, ufa, uf)
        out[i] = z
    return out


@njit(cache=True)
def _dot(x, w, chunk, kp, ofp, ufp, ka, ofa, ufa, uf):
    n = x.shape[0]
    total = 0.0
    start = 0
    first = True
    while start < n:
        stop = min(start + chunk, n)
        s = 0.0
        for i in range(start, stop):
            s, _, _, _ = _fmaq(x[i], w[i], s, kp, ofp, ufp, ka, ofa, ufa, uf)
        if first:
            total = s
            first = False
        else:
            total, _, _ = _qacc_add(total, s, ka, ofa, ufa, uf)
        start = stop
    return total


@njit(inline="always")
def _row_forward(a, B, out, chunk, kp, ofp, ufp, ka, ofa, ufa, uf):
    # all L accumulations of one output row advance together (independent chains)
    N = a.shape[0]
    L = B.shape[1]
    s = np.empty(L)
    start = 0
    first = True
    while start < N:
        stop = min(start + chunk, N)
        s[:] = 0.0
        for i in range(start, stop):
            x = a[i]
            if x == 0.0:
                continue  # Q_acc(0 + s) == s for representable s
            for l in range(L):
                z, _, _, _ = _fmaq(x, B[i, l], s[l], kp, ofp, ufp, ka, ofa, ufa, uf)
                s[l] = z
        if first:
            out[:] = s
            first = False
        else:
            for l in range(L):
                z, _, _ = _qacc_add(out[l], s[l], ka, ofa, ufa, uf)
                out[l] = z
        start = stop
    if first:
        out[:] = 0.0


@njit(parallel=True, cache=True)
def gemm_forward(A, B, chunk, kp, ofp, ufp, ka, ofa, ufa, uf):
    """``A`` is (K, N), ``B`` is (N, L); returns the (K, L) FMAq product."""
    K = A.shape[0]
    L = B.shape[1]
    out = np.empty((K, L))
    for k in prange(K):
        _row_forward(A[k], B, out[k], chunk, kp, ofp, ufp, ka, ofa, ufa, uf)
    return out


@njit(cache=True)
def dot_trace(x, w, chunk, kp, ofp, ufp, ka, ofa, ufa, uf, eps1, eps2):
    """Chunked dot product with a full per-summand event record.

    Returns ``(y, prod_uf, acc_of, diff_bit, alpha, spine_of)`` where
    ``spine_of[c]`` flags an overflow when chunk ``c`` joined the running total.
    """
    n = x.shape[0]
    nchunks = (n + chunk - 1) // chunk
    prod_uf = np.zeros(n, np.bool_)
    acc_of = np.zeros(n, np.bool_)
    diff = np.zeros(n, np.bool_)
    alpha = np.zeros(n)
    spine_of = np.zeros(nchunks, np.bool_)
    total = 0.0
    for c in range(nchunks):
        start = c * chunk
        stop = min(start + chunk, n)
        s = 0.0
        for i in range(start, stop):
            z, of, puf, ph = _fmaq(x[i], w[i], s, kp, ofp, ufp, ka, ofa, ufa, uf)
            prod_uf[i] = puf
            acc_of[i] = of
            d = z - s
            diff[i] = abs(d) > eps2 * (abs(ph) + eps1)
            alpha[i] = d / ph if ph != 0.0 else 0.0
            s = z
        if c == 0:
            total = s
        else:
            total, sof, _ = _qacc_add(total, s, ka, ofa, ufa, uf)
            spine_of[c] = sof
    return total, prod_uf, acc_of, diff, alpha, spine_of


@njit(inline="always")
def _row_masks(a, B, m, kind, chunk, kp, ofp, ufp, ka, ofa, ufa, uf, eps1, eps2):
    """Fill ``m`` (N, L) with STE bits for one output row of the GEMM."""
    N = a.shape[0]
    L = B.shape[1]
    s = np.empty(L)
    total = np.empty(L)
    last_of = np.empty(L, np.int64)
    last_spine = np.full(L, -1, np.int64)
    start = 0
    c = 0
    while start < N:
        stop = min(start + chunk, N)
        s[:] = 0.0
        last_of[:] = start - 1
        for i in range(start, stop):
            x = a[i]
            row = m[i]
            if x == 0.0:
                # zero product: z == s, DIFF bit 0, OF iff s is saturated
                if kind == MASK_IMMEDIATE_DIFF:
                    row[:] = False
                elif kind == MASK_IMMEDIATE_OF:
                    for l in range(L):
                        row[l] = abs(s[l]) < ofa
                else:
                    for l in range(L):
                        if abs(s[l]) >= ofa:
                            last_of[l] = i
                continue
            if kind == MASK_IMMEDIATE_DIFF:
                for l in range(L):
                    z, of, puf, ph = _fmaq(x, B[i, l], s[l], kp, ofp, ufp, ka, ofa, ufa, uf)
                    row[l] = abs(z - s[l]) > eps2 * (abs(ph) + eps1)
                    s[l] = z
            elif kind == MASK_IMMEDIATE_OF:
                for l in range(L):
                    z, of, puf, ph = _fmaq(x, B[i, l], s[l], kp, ofp, ufp, ka, ofa, ufa, uf)
                    row[l] = not of
                    s[l] = z
            else:
                for l in range(L):
                    z, of, puf, ph = _fmaq(x, B[i, l], s[l], kp, ofp, ufp, ka, ofa, ufa, uf)
                    if of:
                        last_of[l] = i
                    s[l] = z
        if kind == MASK_RECURSIVE_OF:
            for i in range(start, stop):
                row = m[i]
                for l in range(L):
                    row[l] = i > last_of[l]
        if c == 0:
            total[:] = s
        else:
            for l in range(L):
                z, sof, _ = _qacc_add(total[l], s[l], ka, ofa, ufa, uf)
                total[l] = z
                if sof:
                    last_spine[l] = c
        start = stop
        c += 1
    if kind == MASK_RECURSIVE_OF:
        # overflow while aggregating chunk c kills chunks 0..c
        for l in range(L):
            if last_spine[l] >= 0:
                for i in range(min(N, (last_spine[l] + 1) * chunk)):
                    m[i, l] = False


@njit(parallel=True, cache=True)
def gemm_masks(A, B, kind, chunk, kp, ofp, ufp, ka, ofa, ufa, uf, eps1, eps2):
    """Re-execute the forward GEMM; returns the STE mask indexed [k, i, l]."""
    K, N = A.shape
    L = B.shape[1]
    mask = np.empty((K, N, L), np.bool_)
    for k in prange(K):
        _row_masks(A[k], B, mask[k], kind, chunk, kp, ofp, ufp, ka, ofa, ufa, uf, eps1, eps2)
    return mask


@njit(parallel=True, cache=True)
def masked_grad_a(up, B, mask):
    """grad_A[k, i] = sum_l up[k, l] * B[i, l] * mask[k, i, l], l ascending."""
    K, L = up.shape
    N = B.shape[0]
    g = np.zeros((K, N))
    for k in prange(K):
        u = up[k]
        mk = mask[k]
        for i in range(N):
            acc = 0.0
            b = B[i]
            mi = mk[i]
            for l in range(L):
                if mi[l]:
                    acc += u[l] * b[l]
            g[k, i] = acc
    return g


@njit(parallel=True, cache=True)
def masked_grad_b(up, A, mask):
    """grad_B[i, l] = sum_k up[k, l] * A[k, i] * mask[k, i, l], k ascending."""
    K, L = up.shape
    N = A.shape[1]
    g = np.zeros((N, L))
    for i in prange(N):
        gi = g[i]
        for k in range(K):
            x = A[k, i]
            if x == 0.0:
                continue
            u = up[k]
            mi = mask[k, i]
            for l in range(L):
                if mi[l]:
                    gi[l] += x * u[l]
    return g


@njit(parallel=True, cache=True)
def plain_grad_a(up, B):
    K, L = up.shape
    N = B.shape[0]
    g = np.zeros((K, N))
    for k in prange(K):
        u = up[k]
        for i in range(N):
            acc = 0.0
            b = B[i]
            for l in range(L):
                acc += u[l] * b[l]
            g[k, i] = acc
    return g


@njit(parallel=True, cache=True)
def plain_grad_b(up, A):
    K, L = up.shape
    N = A.shape[1]
    g = np.zeros((N, L))
    for i in prange(N):
        gi = g[i]
        for k in range(K):
            x = A[k, i]
            if x == 0.0:
                continue
            u = up[k]
            for l in range(L):
                gi[l] += x * u[l]
    return g


@njit(parallel=True, cache=True)
def plain_gemm(A, B):
    """Unquantized ``A @ B`` with a fixed, thread-independent summation order."""
    K, N = A.shape
    L = B.shape[1]
    out = np.zeros((K, L))
    for k in prange(K):
        o = out[k]
        for i in range(N):
            x = A[k, i]
            if x == 0.0:
                continue
            b = B[i]
            for l in range(L):
                o[l] += x * b[l]
    return out
