"""Straight-through estimators for the quantized accumulation graph.

Masks are never stored at forward time; the backward pass re-executes the
forward GEMM (same kernel, same accumulation schedule) and reads one bit per
FMAq out of it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from .fmaq import FmaqConfig, _check_gemm, _vec, accumulate_chunked

__all__ = ["SteKind", "SteConfig", "compute_masks", "gemm_masks", "gemm_backward", "alpha_values"]


class SteKind(str, enum.Enum):
    IDENTITY = "identity"
    RECURSIVE_OF = "recursive_of"
    IMMEDIATE_OF = "immediate_of"
    IMMEDIATE_DIFF = "immediate_diff"

    @classmethod
    def parse(cls, value) -> "SteKind":
        if isinstance(value, SteKind):
            return value
        return cls(str(value).lower().replace("-", "_").replace("/", "_"))


_KERNEL_KIND = {
    SteKind.RECURSIVE_OF: K.MASK_RECURSIVE_OF,
    SteKind.IMMEDIATE_OF: K.MASK_IMMEDIATE_OF,
    SteKind.IMMEDIATE_DIFF: K.MASK_IMMEDIATE_DIFF,
}


@dataclass(frozen=True)
class SteConfig:
    """STE choice plus the DIFF thresholds.

    ``eps1`` defaults to the smallest positive product-format value and ``eps2``
    to 0.5: a product counts as registered if at least half of it reached the
    accumulator.
    """

    kind: SteKind = SteKind.IDENTITY
    eps1: Optional[float] = None
    eps2: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", SteKind.parse(self.kind))
        if self.eps1 is not None and self.eps1 <= 0:
            raise ValueError("eps1 must be positive")
        if not 0.0 < self.eps2 < 1.0:
            raise ValueError("eps2 must lie in (0, 1)")

    def resolved_eps(self, cfg: FmaqConfig) -> tuple[float, float]:
        return (cfg.prod_fmt.r_uf if self.eps1 is None else self.eps1), self.eps2


def _as_ste(kind) -> SteConfig:
    return kind if isinstance(kind, SteConfig) else SteConfig(SteKind.parse(kind))


def gemm_masks(A, B, cfg: FmaqConfig, kind) -> np.ndarray:
    """STE bits for every (output row k, summand i, output column l).

    Identity short-circuits to all ones.
    """
    ste = _as_ste(kind)
    A, B = _check_gemm(A, B)
    if ste.kind is SteKind.IDENTITY:
        return np.ones((A.shape[0], A.shape[1], B.shape[1]), dtype=bool)
    eps1, eps2 = ste.resolved_eps(cfg)
    return K.gemm_masks(A, B, _KERNEL_KIND[ste.kind], *cfg.kernel_args(), eps1, eps2)


def compute_masks(x, w, cfg: FmaqConfig, kind) -> np.ndarray:
    """Mask of a single dot product ``sum_i x_i w_i``."""
    x, w = _vec(x), _vec(w)
    if x.ndim != 1 or x.shape != w.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {w.shape}")
    return gemm_masks(x[None, :], w[:, None], cfg, kind)[0, :, 0]


def gemm_backward(A, B, upstream, cfg: Optional[FmaqConfig], kind=SteKind.IDENTITY,
                  need_grad_a: bool = True):
    """Gradients of ``Y = FMAq-GEMM(A, B)`` w.r.t. ``A`` and ``B``.

    ``grad_A[k, i] = sum_l up[k, l] * B[i, l] * m[k, i, l]`` and
    ``grad_B[i, l] = sum_k up[k, l] * A[k, i] * m[k, i, l]``; both sums run in
    ascending index order so Identity and an all-ones mask agree bit for bit.
    ``cfg=None`` means an exact GEMM, which only admits the Identity STE.
    """
    ste = _as_ste(kind)
    A, B = _check_gemm(A, B)
    up = _vec(upstream)
    if up.shape != (A.shape[0], B.shape[1]):
        raise ValueError(f"upstream gradient has shape {up.shape}, expected {(A.shape[0], B.shape[1])}")
    if ste.kind is SteKind.IDENTITY:
        ga = K.plain_grad_a(up, B) if need_grad_a else None
        return ga, K.plain_grad_b(up, A)
    if cfg is None:
        raise ValueError(f"{ste.kind.value} STE needs an FMAq config")
    mask = gemm_masks(A, B, cfg, ste)
    ga = K.masked_grad_a(up, B, mask) if need_grad_a else None
    return ga, K.masked_grad_b(up, A, mask)


def alpha_values(x, w, cfg: FmaqConfig) -> np.ndarray:
    """Per-summand correction ``(FMAq(x_i, w_i, S_i) - S_i) / (x_i w_i)`` (0 for zero products)."""
    _, tr = accumulate_chunked(x, w, cfg, trace=True)
    return tr.alpha
