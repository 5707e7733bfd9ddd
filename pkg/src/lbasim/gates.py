"""Analytical gate-count model of a quantized FMA datapath.

Weights/activations use an ``m``/``e`` minifloat; the product and accumulator
use ``M``/``E``.  Aligned mantissas interact on a canvas of ``F = 2M + 1`` bits.
Flip-flops are not counted.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

__all__ = ["GateParams", "GateBreakdown", "RatioRow", "gate_breakdown", "gate_ratio_report",
           "format_ratio_table", "write_ratio_csv"]


@dataclass(frozen=True)
class GateParams:
    m: int
    e: int
    M: int
    E: int
    c_and: float = 1
    c_or: float = 1
    c_mux: float = 3
    c_ha: float = 3
    c_fa: float = 7

    def __post_init__(self):
        for name in ("m", "e", "M", "E"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def canvas_bits(self) -> int:
        return 2 * self.M + 1

    @property
    def k_max(self) -> int:
        # a shift can neither leave the canvas nor exceed the exponent range
        return min(self.canvas_bits, 2**self.E)

    @property
    def shift_bits(self) -> int:
        return min(math.ceil(math.log2(self.canvas_bits)), self.E)

    def scaled_costs(self, factor: float) -> "GateParams":
        return GateParams(self.m, self.e, self.M, self.E, self.c_and * factor, self.c_or * factor,
                          self.c_mux * factor, self.c_ha * factor, self.c_fa * factor)


@dataclass(frozen=True)
class GateBreakdown:
    exponent_adder: float
    exponent_differ: float
    exponent_max: float
    mantissa_mul: float
    sort_exponent: float
    first_shift: float
    mantissa_adder: float
    leading_zero_detector: float
    second_shift: float
    exponent_rebase: float
    final_incrementor: float

    @property
    def total(self) -> float:
        return sum(v for _, v in self.rows())

    def rows(self) -> list[tuple[str, float]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


def gate_breakdown(p: GateParams) -> GateBreakdown:
    m, e, M, E = p.m, p.e, p.M, p.E
    F, k, sb = p.canvas_bits, p.k_max, p.shift_bits
    return GateBreakdown(
        exponent_adder=(e - 1) * p.c_fa + p.c_ha,
        exponent_differ=(min(E, e + 1) - 1) * p.c_fa + p.c_ha * (1 + abs(e + 1 - E)),
        exponent_max=E * p.c_mux,
        mantissa_mul=(m + 3) ** 2 * p.c_and + (m + 2) ** 2 * p.c_fa + (m + 2) * p.c_ha,
        sort_exponent=(M + 1) * p.c_mux,
        first_shift=(F - 1) * sb * p.c_mux,
        mantissa_adder=M * p.c_fa + p.c_ha,
        leading_zero_detector=F * (p.c_and + p.c_or) + sb**2 * p.c_or,
        # narrow formats can drive this negative; a block never costs < 0 gates
        second_shift=max(0, (M + 1) * sb * p.c_mux - k * (p.c_fa - p.c_and)),
        exponent_rebase=(E - 1) * p.c_fa + p.c_ha,
        final_incrementor=(M + 1) * p.c_ha,
    )


@dataclass(frozen=True)
class RatioRow:
    m: int
    e: int
    M: int
    E: int
    F: int
    shift_bits: int
    total: float
    ratio_pct: float


def gate_ratio_report(points: Sequence[GateParams]) -> list[RatioRow]:
    """Totals relative to the first design point (which reads 100%)."""
    if not points:
        raise ValueError("need at least one design point")
    ref = gate_breakdown(points[0]).total
    out = []
    for p in points:
        t = gate_breakdown(p).total
        out.append(RatioRow(p.m, p.e, p.M, p.E, p.canvas_bits, p.shift_bits, t, 100.0 * t / ref))
    return out


_HEADER = ["m", "e", "M", "E", "F", "shift_bits", "total", "ratio_pct"]


def write_ratio_csv(rows: Iterable[RatioRow], fh) -> None:
    w = csv.writer(fh)
    w.writerow(_HEADER)
    for r in rows:
        w.writerow([r.m, r.e, r.M, r.E, r.F, r.shift_bits, f"{r.total:g}", f"{r.ratio_pct:.1f}"])


def format_ratio_table(rows: Iterable[RatioRow]) -> str:
    buf = io.StringIO()
    write_ratio_csv(rows, buf)
    lines = [line.split(",") for line in buf.getvalue().strip().splitlines()]
    widths = [max(len(line[i]) for line in lines) for i in range(len(_HEADER))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in lines)
