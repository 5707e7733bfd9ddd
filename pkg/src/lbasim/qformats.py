"""Scalar/array quantizers for fixed-point and minifloat formats.

All simulated values live in a float64 carrier.  As long as the simulated
mantissa fits (``M + 1 <= 52``) and exponents stay in the normal double range,
every representable value of the simulated format is exactly a double, so the
quantizers below are bit-exact.

Format strings::

    M7E4b10    float, 7 mantissa bits, 4 exponent bits, bias 10
    M4E3flex   float with a per-tensor (flex) bias
    M7E4       float with the default bias 2**(E-1)
    FIXED8b0   fixed point, 8 bits, bias 0
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import _kernels as K

__all__ = [
    "RoundMode",
    "EventKind",
    "FixedFormat",
    "FloatFormat",
    "QuantEvent",
    "FormatParseError",
    "parse_format",
    "quantize_fixed",
    "quantize_float",
    "classify",
    "classify_array",
]

MAX_CARRIER_MANTISSA = 52
# keep simulated exponents well inside the normal double range
_MAX_CARRIER_EXP = 1000


class RoundMode(str, enum.Enum):
    TRUNCATE = "truncate"  # floor on magnitude (bit-mask)
    NEAREST = "nearest"  # ties to even
    STOCHASTIC = "stochastic"

    @classmethod
    def parse(cls, value: Union[str, "RoundMode"]) -> "RoundMode":
        if isinstance(value, RoundMode):
            return value
        return cls(value.lower())


class EventKind(enum.IntEnum):
    EXACT = 0
    UNDERFLOW = 1
    OVERFLOW = 2
    SWAMP = 3


class FormatParseError(ValueError):
    """Raised for malformed format strings; ``position`` is the offending column."""

    def __init__(self, text: str, position: int, reason: str):
        self.text = text
        self.position = position
        self.reason = reason
        super().__init__(f"cannot parse format {text!r} at position {position}: {reason}")


@dataclass(frozen=True)
class FixedFormat:
    B: int
    b: int

    def __post_init__(self):
        if self.B < 2:
            raise ValueError(f"fixed-point format needs B >= 2, got {self.B}")

    @property
    def r_min(self) -> float:
        return -math.ldexp(1.0, self.B - self.b - 1)

    @property
    def r_max(self) -> float:
        return math.ldexp(2 ** (self.B - 1) - 1, -self.b)

    @property
    def step(self) -> float:
        return math.ldexp(1.0, -self.b)

    def __str__(self) -> str:
        return f"FIXED{self.B}b{self.b}"


@dataclass(frozen=True)
class FloatFormat:
    """Minifloat descriptor: ``M`` mantissa bits, ``E`` exponent bits, bias ``b``.

    ``flex`` marks formats whose bias is re-chosen per tensor (see
    :func:`lbasim.nn.flex_bias`); ``b`` then only serves as a fallback.
    """

    M: int
    E: int
    b: int
    flex: bool = False

    def __post_init__(self):
        if self.M < 0:
            raise ValueError(f"mantissa bits must be >= 0, got {self.M}")
        if self.E < 2:
            raise ValueError(f"exponent bits must be >= 2, got {self.E}")
        if self.M + 1 > MAX_CARRIER_MANTISSA:
            raise ValueError(
                f"M={self.M} does not fit the float64 carrier (need M + 1 <= {MAX_CARRIER_MANTISSA})"
            )
        if self.max_exponent > _MAX_CARRIER_EXP or -self.b < -_MAX_CARRIER_EXP:
            raise ValueError(f"exponent range of {self} exceeds the float64 carrier")

    @classmethod
    def default(cls, M: int, E: int) -> "FloatFormat":
        return cls(M, E, 2 ** (E - 1))

    @property
    def max_exponent(self) -> int:
        return 2**self.E - self.b - 1

    @property
    def r_of(self) -> float:
        return math.ldexp(2.0 - math.ldexp(1.0, -self.M), self.max_exponent)

    @property
    def r_uf(self) -> float:
        return math.ldexp(1.0, -self.b)

    def with_bias(self, b: int) -> "FloatFormat":
        return FloatFormat(self.M, self.E, b, self.flex)

    def widened(self, extra_mantissa: int) -> "FloatFormat":
        if extra_mantissa < 0:
            raise ValueError("extra_mantissa must be >= 0")
        if extra_mantissa == 0:
            return self
        return FloatFormat(self.M + extra_mantissa, self.E, self.b, self.flex)

    @property
    def bits(self) -> int:
        return self.M + self.E + 1

    def __str__(self) -> str:
        if self.flex:
            return f"M{self.M}E{self.E}flex"
        return f"M{self.M}E{self.E}b{self.b}"


@dataclass(frozen=True)
class QuantEvent:
    kind: EventKind
    absolute_error: float
    relative_error: float


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, reason: str):
        raise FormatParseError(self.text, self.pos, reason)

    def literal(self, lit: str) -> bool:
        if self.text.startswith(lit, self.pos):
            self.pos += len(lit)
            return True
        return False

    def integer(self, signed: bool = False) -> int:
        start = self.pos
        if signed and self.text.startswith("-", self.pos):
            self.pos += 1
        digits = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos == digits:
            self.pos = start
            self.fail("expected an integer")
        return int(self.text[start:self.pos])


def parse_format(text: str) -> Union[FloatFormat, FixedFormat]:
    """Parse ``M7E4b10`` / ``M4E3flex`` / ``M7E4`` / ``FIXED8b0``."""
    sc = _Scanner(text)
    if sc.literal("FIXED"):
        B = sc.integer()
        if not sc.literal("b"):
            sc.fail("expected 'b<bias>'")
        b = sc.integer(signed=True)
        fmt_args, flex = (B, b), None
    else:
        if not sc.literal("M"):
            sc.fail("expected 'M' or 'FIXED'")
        M = sc.integer()
        if not sc.literal("E"):
            sc.fail("expected 'E'")
        E = sc.integer()
        flex = False
        if sc.literal("flex"):
            flex, b = True, None
        elif sc.literal("b"):
            b = sc.integer(signed=True)
        else:
            b = None
        fmt_args = (M, E, b)
    if sc.pos != len(text):
        sc.fail("unexpected trailing characters")
    try:
        if flex is None:
            return FixedFormat(*fmt_args)
        M, E, b = fmt_args
        return FloatFormat(M, E, 2 ** (E - 1) if b is None else b, flex=flex)
    except ValueError as err:
        raise FormatParseError(text, 0, str(err)) from None


def _round(v: np.ndarray, mode: RoundMode, rng) -> np.ndarray:
    if mode is RoundMode.TRUNCATE:
        return np.floor(v)
    if mode is RoundMode.NEAREST:
        return np.rint(v)
    if rng is None:
        raise ValueError("stochastic rounding needs an explicit rng")
    return np.floor(v + rng.random(np.shape(v)))


def _as_output(q: np.ndarray, scalar: bool):
    return float(q) if scalar else q


def quantize_fixed(x, fmt: FixedFormat, mode=RoundMode.NEAREST, rng=None):
    """Fixed-point quantizer with saturation at ``[r_min, r_max]``.

    Truncate rounds toward zero, matching the float quantizer's floor on
    magnitude.
    """
    mode = RoundMode.parse(mode)
    scalar = np.ndim(x) == 0
    xa = np.asarray(x, dtype=np.float64)
    scaled = np.ldexp(xa, fmt.b)
    if mode is RoundMode.TRUNCATE:
        r = np.trunc(scaled)
    else:
        r = _round(scaled, mode, rng)
    q = np.clip(np.ldexp(r, -fmt.b), fmt.r_min, fmt.r_max)
    q = np.where(xa <= fmt.r_min, fmt.r_min, np.where(xa >= fmt.r_max, fmt.r_max, q))
    q = q + 0.0  # -0 -> +0
    return _as_output(q, scalar)


def quantize_float(x, fmt: FloatFormat, mode=RoundMode.TRUNCATE, uf_enabled: bool = True,
                   extra_mantissa: int = 0, rng=None):
    """Quantize ``x`` (scalar or array) to the minifloat ``fmt``.

    Magnitudes at or above ``r_of`` saturate; magnitudes below ``r_uf`` flush to
    +0 when ``uf_enabled``.  With underflow disabled the exponent is unbounded
    below and only the mantissa is rounded.
    """
    mode = RoundMode.parse(mode)
    fmt = fmt.widened(extra_mantissa)
    scalar = np.ndim(x) == 0
    xa = np.asarray(x, dtype=np.float64)
    if mode is not RoundMode.STOCHASTIC:
        flat = np.ascontiguousarray(xa).reshape(-1)
        out = np.empty_like(flat)
        if K.quantize_flat(flat, 52 - fmt.M, fmt.r_of, fmt.r_uf, uf_enabled, mode is RoundMode.NEAREST, out):
            return _as_output(out.reshape(xa.shape), scalar)
    a = np.abs(xa)
    frac, exp = np.frexp(a)  # a = frac * 2**exp, frac in [0.5, 1)
    # frac * 2**(M+1) = |x| * 2**(M - e) with e = floor(log2|x|), exact
    r = _round(np.ldexp(frac, fmt.M + 1), mode, rng)
    q = np.ldexp(r, exp - 1 - fmt.M)
    r_of = fmt.r_of
    q = np.where(a >= r_of, r_of, np.minimum(q, r_of))
    if uf_enabled:
        q = np.where(a < fmt.r_uf, 0.0, q)
    q = np.where(q == 0.0, 0.0, np.copysign(q, xa))
    return _as_output(q, scalar)


def classify_array(x, fmt: FloatFormat, mode=RoundMode.TRUNCATE, uf_enabled: bool = True,
                   extra_mantissa: int = 0, rng=None):
    """Vectorised :func:`classify`: returns ``(q, kinds, abs_err, rel_err)``."""
    xa = np.asarray(x, dtype=np.float64)
    q = np.asarray(quantize_float(xa, fmt, mode, uf_enabled, extra_mantissa, rng), dtype=np.float64)
    f = fmt.widened(extra_mantissa)
    a = np.abs(xa)
    abs_err = np.abs(q - xa)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_err = np.where(a > 0, abs_err / a, 0.0)
    kinds = np.full(xa.shape, EventKind.SWAMP, dtype=np.int8)
    kinds[a >= f.r_of] = EventKind.OVERFLOW
    if uf_enabled:
        kinds[a < f.r_uf] = EventKind.UNDERFLOW
    kinds[q == xa] = EventKind.EXACT
    return q, kinds, abs_err, rel_err


def classify(x: float, fmt: FloatFormat, mode=RoundMode.TRUNCATE, uf_enabled: bool = True,
             extra_mantissa: int = 0, rng=None) -> QuantEvent:
    _, kinds, abs_err, rel_err = classify_array(x, fmt, mode, uf_enabled, extra_mantissa, rng)
    return QuantEvent(EventKind(int(kinds)), float(abs_err), float(rel_err))
