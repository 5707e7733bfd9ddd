"""Quantized fused multiply-add and the chunked GEMM simulator.

A dot product ``y = sum_i x_i w_i`` is evaluated the way a chunked systolic
accumulator would: each chunk of ``chunk_size`` summands is reduced with
``FMAq(x, w, s) = Q_acc(Q_prod(x*w) + s)`` starting from an exact zero, and the
chunk partial sums are then folded left to right with ``Q_acc`` after every
addition.  Internal rounding is always truncation (floor on magnitude).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .qformats import FloatFormat

__all__ = [
    "FmaqConfig",
    "EventTrace",
    "UnsupportedOperationError",
    "fmaq",
    "accumulate_chunked",
    "gemm_forward",
    "gemm_forward_traced",
    "im2col",
    "conv2d_forward",
    "write_trace_csv",
]


class UnsupportedOperationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FmaqConfig:
    """Product/accumulator formats and chunking for FMAq.

    When ``acc_fmt`` is omitted it copies ``prod_fmt`` with the bias lowered by
    ``log2(chunk_size) / 2`` (16 -> 2), which keeps the accumulator's overflow
    threshold ahead of a sum of ``chunk_size`` products.
    """

    prod_fmt: FloatFormat
    acc_fmt: Optional[FloatFormat] = None
    chunk_size: int = 16
    uf_enabled: bool = True
    acc_extra_mantissa: int = 0

    def __post_init__(self):
        c = self.chunk_size
        if c < 1 or c & (c - 1):
            raise ValueError(f"chunk_size must be a power of two, got {c}")
        if self.acc_extra_mantissa < 0:
            raise ValueError("acc_extra_mantissa must be >= 0")
        if self.acc_fmt is None:
            object.__setattr__(self, "acc_fmt", self.prod_fmt.with_bias(bias_rule(self.prod_fmt.b, c)))
        # raises if the widened accumulator no longer fits the carrier
        self.acc_fmt.widened(self.acc_extra_mantissa)

    @property
    def acc_effective(self) -> FloatFormat:
        return self.acc_fmt.widened(self.acc_extra_mantissa)

    def replace(self, **changes) -> "FmaqConfig":
        fields = dict(prod_fmt=self.prod_fmt, acc_fmt=self.acc_fmt, chunk_size=self.chunk_size,
                      uf_enabled=self.uf_enabled, acc_extra_mantissa=self.acc_extra_mantissa)
        fields.update(changes)
        return FmaqConfig(**fields)

    def kernel_args(self) -> tuple:
        kp, ofp, ufp = K.quant_params(self.prod_fmt)
        ka, ofa, ufa = K.quant_params(self.acc_effective)
        return (self.chunk_size, kp, ofp, ufp, ka, ofa, ufa, bool(self.uf_enabled))

    def __str__(self) -> str:
        extra = f"+{self.acc_extra_mantissa}" if self.acc_extra_mantissa else ""
        uf = "" if self.uf_enabled else ",noUF"
        return f"prod={self.prod_fmt},acc={self.acc_fmt}{extra},chunk={self.chunk_size}{uf}"


def bias_rule(prod_bias: int, chunk_size: int) -> int:
    half_log = math.log2(chunk_size) / 2
    if half_log != int(half_log):
        raise ValueError(
            f"chunk_size={chunk_size} gives a non-integer accumulator bias shift; pass acc_fmt explicitly"
        )
    return prod_bias - int(half_log)


@dataclass
class EventTrace:
    """Per-summand record of one chunked accumulation."""

    prod_uf: np.ndarray
    acc_overflowed_after: np.ndarray
    diff_bit: np.ndarray
    alpha: np.ndarray
    spine_overflow: np.ndarray
    chunk_size: int
    last_overflow_index: Optional[int] = field(default=None)

    def __post_init__(self):
        self.last_overflow_index = _last_recursive_zero(self.acc_overflowed_after, self.spine_overflow,
                                                        self.chunk_size)

    def recursive_mask(self) -> np.ndarray:
        n = self.acc_overflowed_after.shape[0]
        mask = np.ones(n, dtype=bool)
        c = self.chunk_size
        for start in range(0, n, c):
            hits = np.flatnonzero(self.acc_overflowed_after[start:start + c])
            if hits.size:
                mask[start:start + hits[-1] + 1] = False
        spine_hits = np.flatnonzero(self.spine_overflow)
        if spine_hits.size:
            mask[:(spine_hits[-1] + 1) * c] = False
        return mask


def _last_recursive_zero(acc_of, spine_of, chunk) -> Optional[int]:
    n = acc_of.shape[0]
    last = -1
    for start in range(0, n, chunk):
        hits = np.flatnonzero(acc_of[start:start + chunk])
        if hits.size:
            last = max(last, start + int(hits[-1]))
    spine_hits = np.flatnonzero(spine_of)
    if spine_hits.size:
        last = max(last, min(n, (int(spine_hits[-1]) + 1) * chunk) - 1)
    return None if last < 0 else last


def _default_eps(cfg: FmaqConfig) -> tuple[float, float]:
    return cfg.prod_fmt.r_uf, 0.5


def fmaq(x: float, w: float, s: float, cfg: FmaqConfig) -> float:
    """``Q_acc(Q_prod(x*w) + s)`` evaluated exactly, truncating."""
    return float(K.fmaq_scalar(float(x), float(w), float(s), *cfg.kernel_args()[1:]))


def _vec(v) -> np.ndarray:
    return np.ascontiguousarray(v, dtype=np.float64)


def accumulate_chunked(x, w, cfg: FmaqConfig, trace: bool = False, eps1: Optional[float] = None,
                       eps2: Optional[float] = None):
    """Chunked FMAq dot product of two equal-length vectors.

    Returns ``y``, or ``(y, EventTrace)`` when ``trace`` is set.  ``eps1`` and
    ``eps2`` only affect the trace's DIFF bits.
    """
    x, w = _vec(x), _vec(w)
    if x.ndim != 1 or x.shape != w.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {w.shape}")
    args = cfg.kernel_args()
    if not trace:
        return float(K._dot(x, w, *args))
    d1, d2 = _default_eps(cfg)
    y, puf, of, diff, alpha, spine = K.dot_trace(x, w, *args, d1 if eps1 is None else eps1,
                                                 d2 if eps2 is None else eps2)
    return float(y), EventTrace(puf, of, diff, alpha, spine, cfg.chunk_size)


def _check_gemm(A, B):
    A, B = _vec(A), _vec(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ValueError(f"shape mismatch: {A.shape} @ {B.shape}")
    return A, B


def gemm_forward(A, B, cfg: FmaqConfig) -> np.ndarray:
    """``A @ B`` with every output scalar computed by :func:`accumulate_chunked`."""
    A, B = _check_gemm(A, B)
    if A.shape[1] == 0:
        return np.zeros((A.shape[0], B.shape[1]))
    return K.gemm_forward(A, B, *cfg.kernel_args())


def gemm_forward_traced(A, B, cfg: FmaqConfig, eps1=None, eps2=None):
    """Forward GEMM plus a dict of EventTraces keyed by output index ``(k, l)``."""
    A, B = _check_gemm(A, B)
    Y = np.empty((A.shape[0], B.shape[1]))
    traces = {}
    for k in range(A.shape[0]):
        for l in range(B.shape[1]):
            Y[k, l], traces[k, l] = accumulate_chunked(A[k], B[:, l], cfg, True, eps1, eps2)
    return Y, traces


def write_trace_csv(path, traces: dict) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["out_row", "out_col", "i", "prod_uf", "diff_bit", "alpha", "last_of_index"])
        for (k, l), tr in sorted(traces.items()):
            last = "" if tr.last_overflow_index is None else tr.last_overflow_index
            for i in range(tr.alpha.shape[0]):
                out.writerow([k, l, i, int(tr.prod_uf[i]), int(tr.diff_bit[i]), repr(float(tr.alpha[i])), last])


def _pair(v) -> tuple[int, int]:
    if np.ndim(v) == 0:
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def im2col(x: np.ndarray, kh: int, kw: int, stride=1, padding=0) -> tuple[np.ndarray, int, int]:
    """Lower an (n, c, h, w) input to rows of (c*kh*kw) patches.

    Returns ``(cols, out_h, out_w)`` with ``cols`` of shape (n*out_h*out_w, c*kh*kw)
    and patch features ordered channel-major, matching ``kernel.reshape(oc, -1)``.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    n, c, h, w = x.shape
    out_h = (h + 2 * ph - kh) // sh + 1
    out_w = (w + 2 * pw - kw) // sw + 1
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}")
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=np.float64)
    for i in range(kh):
        i_end = i + sh * out_h
        for j in range(kw):
            j_end = j + sw * out_w
            cols[:, :, i, j, :, :] = xp[:, :, i:i_end:sh, j:j_end:sw]
    cols = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * out_h * out_w, c * kh * kw)
    return cols, out_h, out_w


def conv2d_forward(x, kernel, cfg: FmaqConfig, stride=1, padding=0, trace: bool = False) -> np.ndarray:
    """2-d convolution (cross-correlation) lowered to :func:`gemm_forward`.

    ``x`` is (n, c, h, w), ``kernel`` is (oc, c, kh, kw); accumulation size is
    ``c * kh * kw``.  Event tracing is not offered for convolutions.
    """
    if trace:
        raise UnsupportedOperationError("event tracing / fine-grained STE is not available for convolution")
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d expects 4-d input and kernel")
    if x.shape[1] != kernel.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape[1]} vs kernel {kernel.shape[1]}")
    oc, _, kh, kw = kernel.shape
    cols, out_h, out_w = im2col(x, kh, kw, stride, padding)
    y = gemm_forward(cols, kernel.reshape(oc, -1).T, cfg)
    return y.reshape(x.shape[0], out_h, out_w, oc).transpose(0, 3, 1, 2)
