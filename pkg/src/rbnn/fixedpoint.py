"""Two's-complement fixed-point scalars and their array counterparts.

Values are held as signed integer raws plus a :class:`QFormat`.  Precision is
reduced by decimation (arithmetic right shift, i.e. rounding toward -inf) and
out-of-range results saturate to the format limits.  Rounding toward -inf on
negative values is a choice: dropping the low bits of a two's-complement
word is exactly that, and nothing fancier (stochastic rounding etc.) is done.

Weight updates are the one exception.  The update itself is decimated toward
zero before it is added, so an update smaller than one LSB changes nothing.
Flooring ``w + delta`` instead would turn every tiny negative update into a
full -1 LSB step, and over thousands of SGD steps that drags narrow weights
to the bottom of their range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_TOTAL_BITS = 32


@dataclass(frozen=True)
class QFormat:
    """Signed fixed-point format with ``total_bits`` bits, ``frac_bits`` of them fractional."""

    total_bits: int
    frac_bits: int

    def __post_init__(self) -> None:
        if not 2 <= self.total_bits <= MAX_TOTAL_BITS:
            raise ValueError(f"total_bits must be in [2, {MAX_TOTAL_BITS}], got {self.total_bits}")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError(f"frac_bits must be in [0, total_bits), got {self.frac_bits}")

    @classmethod
    def weight(cls, bits: int) -> QFormat:
        """Q1.(bits-1): the format used for all weight storage, range [-1, 1)."""
        return cls(bits, bits - 1)

    @property
    def is_weight_format(self) -> bool:
        return self.frac_bits == self.total_bits - 1

    @property
    def min_raw(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def max_raw(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def lsb(self) -> float:
        return 1.0 / self.scale

    @property
    def min_value(self) -> float:
        return self.min_raw / self.scale

    @property
    def max_value(self) -> float:
        return self.max_raw / self.scale

    def fits(self, raw: int) -> bool:
        return self.min_raw <= raw <= self.max_raw

    def __str__(self) -> str:
        return f"Q{self.total_bits - self.frac_bits}.{self.frac_bits}"


@dataclass(frozen=True)
class FixedValue:
    raw: int
    format: QFormat

    def __post_init__(self) -> None:
        if not self.format.fits(self.raw):
            raise ValueError(f"raw {self.raw} does not fit in {self.format}")

    @property
    def real(self) -> float:
        return self.raw / self.format.scale

    def __float__(self) -> float:
        return self.real


def _clamp(raw: int, q: QFormat) -> int:
    return max(q.min_raw, min(q.max_raw, raw))


def quantize(x: float, q: QFormat) -> FixedValue:
    """Truncate ``x`` to ``q`` (floor) and saturate to its range."""
    if math.isnan(x):
        raise ValueError("cannot quantize NaN")
    if math.isinf(x):
        return FixedValue(q.max_raw if x > 0 else q.min_raw, q)
    # ldexp is exact, so floor sees the true scaled value
    return FixedValue(_clamp(math.floor(math.ldexp(x, q.frac_bits)), q), q)


def narrow(v: FixedValue, q2: QFormat) -> FixedValue:
    """Drop least-significant bits of ``v`` down to ``q2.frac_bits`` and saturate."""
    shift = v.format.frac_bits - q2.frac_bits
    if shift < 0:
        raise ValueError(f"cannot narrow {v.format} to {q2}: target has more fractional bits")
    return FixedValue(_clamp(v.raw >> shift, q2), q2)


def binarize(v: FixedValue) -> int:
    """Sign bit of ``v`` as +1/-1.  Zero has a clear sign bit and maps to +1."""
    return -1 if v.raw < 0 else 1


def saturating_update(w: FixedValue, delta: float) -> FixedValue:
    """``w + delta`` with ``delta`` truncated toward zero to ``w``'s LSB, then saturated."""
    if math.isnan(delta):
        raise ValueError("NaN update")
    if math.isinf(delta):
        return quantize(delta, w.format)
    step = math.trunc(math.ldexp(delta, w.format.frac_bits))
    return FixedValue(_clamp(w.raw + step, w.format), w.format)


# Array versions, used by the model and the training loop.  Raws are int64.

def quantize_array(x: np.ndarray, q: QFormat) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise ValueError("cannot quantize NaN")
    scaled = np.floor(np.ldexp(x, q.frac_bits))
    return np.clip(scaled, q.min_raw, q.max_raw).astype(np.int64)


def dequantize_array(raw: np.ndarray, q: QFormat) -> np.ndarray:
    return np.ldexp(np.asarray(raw, dtype=np.float64), -q.frac_bits)


def narrow_array(raw: np.ndarray, src: QFormat, dst: QFormat) -> np.ndarray:
    shift = src.frac_bits - dst.frac_bits
    if shift < 0:
        raise ValueError(f"cannot narrow {src} to {dst}")
    return np.clip(np.right_shift(np.asarray(raw, dtype=np.int64), shift), dst.min_raw, dst.max_raw)


def saturate_array(raw: np.ndarray, q: QFormat) -> np.ndarray:
    return np.clip(raw, q.min_raw, q.max_raw)


def binarize_array(raw: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(raw) < 0, -1, 1).astype(np.int8)


def saturating_update_array(raw: np.ndarray, delta: np.ndarray, q: QFormat) -> np.ndarray:
    """Vectorised :func:`saturating_update` on raws of a single format."""
    delta = np.asarray(delta, dtype=np.float64)
    if np.isnan(delta).any():
        raise ValueError("NaN update")
    step = np.trunc(np.clip(np.ldexp(delta, q.frac_bits), -2.0 ** 40, 2.0 ** 40)).astype(np.int64)
    return np.clip(np.asarray(raw, dtype=np.int64) + step, q.min_raw, q.max_raw)
