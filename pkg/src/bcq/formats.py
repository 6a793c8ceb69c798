"""Parametric number formats and max-scaled round-to-nearest quantization.

Floating-point formats are IEEE-style with subnormals and no infinities.
Formats with three or more exponent bits reserve the single top codepoint
(all-ones exponent and mantissa) as NaN, FP8-style, which is what puts the
e4m3 ceiling at 448; the 4-bit formats spend every codepoint on finite
values, so e2m1 tops out at 6 and e1m2 at 3.5.
"""

import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class FpFormat:
    """Floating point with ``exp_bits`` exponent and ``man_bits`` mantissa bits."""

    exp_bits: int
    man_bits: int

    def __post_init__(self):
        if self.exp_bits < 1 or self.man_bits < 0:
            raise ValidationError("fp format needs exp_bits >= 1 and man_bits >= 0")

    @property
    def bias(self) -> int:
        return 2 ** (self.exp_bits - 1) - 1

    @property
    def bitwidth(self) -> int:
        return 1 + self.exp_bits + self.man_bits

    @property
    def reserves_nan(self) -> bool:
        return self.exp_bits >= 3

    def __str__(self):
        return f"e{self.exp_bits}m{self.man_bits}"


@dataclass(frozen=True)
class IntFormat:
    """Signed integer with the symmetric range +/-(2**(bits-1) - 1)."""

    bits: int

    def __post_init__(self):
        if self.bits < 2:
            raise ValidationError("int format needs at least 2 bits")

    @property
    def bitwidth(self) -> int:
        return self.bits

    def __str__(self):
        return f"int{self.bits}"


E4M3 = FpFormat(4, 3)
E8M0 = FpFormat(8, 0)

_FMT_RE = re.compile(r"^(?:int(\d+)|e(\d+)m(\d+))$")


def parse_format(name: str):
    """Resolve a format name like "int4", "e2m1" or "e4m3" (case-insensitive)."""
    m = _FMT_RE.match(name.strip().lower())
    if m is None:
        raise ValidationError(f"unknown number format: {name!r}")
    if m.group(1) is not None:
        return IntFormat(int(m.group(1)))
    return FpFormat(int(m.group(2)), int(m.group(3)))


def codepoints(fmt: FpFormat):
    """All finite (magnitude, exp_field, man_field) triples, sorted by magnitude."""
    pts = []
    for e in range(2**fmt.exp_bits):
        for man in range(2**fmt.man_bits):
            if fmt.reserves_nan and e == 2**fmt.exp_bits - 1 and man == 2**fmt.man_bits - 1:
                continue  # NaN codepoint
            if e == 0:
                mag = np.ldexp(man / 2.0**fmt.man_bits, 1 - fmt.bias)
            else:
                mag = np.ldexp(1.0 + man / 2.0**fmt.man_bits, e - fmt.bias)
            pts.append((float(mag), e, man))
    pts.sort()
    return pts


@lru_cache(maxsize=None)
def _magnitudes(fmt) -> np.ndarray:
    if isinstance(fmt, IntFormat):
        mags = np.arange(2 ** (fmt.bits - 1), dtype=np.float64)
    else:
        if fmt.exp_bits + fmt.man_bits > 8:
            raise ValidationError(f"refusing to enumerate {fmt}: more than 8 value bits")
        mags = np.array([p[0] for p in codepoints(fmt)], dtype=np.float64)
    mags.setflags(write=False)
    return mags


def magnitudes(fmt) -> np.ndarray:
    """Sorted non-negative representable magnitudes of ``fmt`` (0 included)."""
    return _magnitudes(fmt)


def enumerate_codewords(fmt) -> np.ndarray:
    """All representable values of ``fmt``, sign included, sorted ascending."""
    mags = _magnitudes(fmt)
    return np.concatenate([-mags[:0:-1], mags])


def max_level(fmt) -> float:
    """Largest finite magnitude representable in ``fmt``."""
    return float(_magnitudes(fmt)[-1])


def compute_scale(values, fmt) -> float:
    """Max-abs scale factor: s = max|x| / max_level(fmt), or 1 for all-zero input.

    Quantization divides by this scale, so the largest-magnitude input lands
    exactly on the format's top level.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValidationError("cannot compute a scale for empty input")
    peak = float(np.max(np.abs(values)))
    if peak == 0.0:
        return 1.0
    return peak / max_level(fmt)


def quantize_rtn(x, fmt, scale: float = 1.0):
    """Round x/scale to the nearest codeword of ``fmt`` and rescale.

    Out-of-range magnitudes clamp to the top level.  Exact halfway cases pick
    the codeword at even position in the magnitude grid, which for fp formats
    is the one with an even mantissa field.  Accepts scalars or arrays.
    """
    if not (scale > 0.0 and np.isfinite(scale)):
        raise ValidationError("scale must be positive and finite")
    mags = _magnitudes(fmt)
    arr = np.asarray(x, dtype=np.float64)
    y = np.abs(arr) / scale
    y = np.minimum(y, mags[-1])
    hi = np.searchsorted(mags, y, side="left")
    lo = np.maximum(hi - 1, 0)
    d_hi = mags[hi] - y
    d_lo = y - mags[lo]
    pick_lo = (d_lo < d_hi) | ((d_lo == d_hi) & (lo % 2 == 0))
    idx = np.where(pick_lo, lo, hi)
    out = mags[idx] * scale * np.where(arr < 0, -1.0, 1.0)
    if np.isscalar(x) or arr.ndim == 0:
        return float(out)
    return out


def quantize_e8m0(s: float) -> float:
    """Nearest power of two to ``s`` in the log domain; halves round up."""
    if not (s > 0.0 and np.isfinite(s)):
        raise ValidationError("power-of-two quantization needs a positive finite value")
    e = int(np.floor(np.log2(float(s)) + 0.5))
    e = max(-127, min(127, e))
    return float(np.ldexp(1.0, e))


def e8m0_exponent(s: float) -> int:
    """Stored exponent of the power-of-two quantization of ``s`` (bias 127, u8)."""
    return int(np.log2(quantize_e8m0(s)))
