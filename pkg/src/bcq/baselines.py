"""Reference block quantizers: per-group max-scaled formats with a second
quantization level on the group scales.

Three named specs cover the usual comparison points: "vsq-g16" (int4 scalars,
group scales as u8 integer multiples of one per-tensor float), "mx4-g16"
(e1m2 scalars standing in for the shared-exponent format it upper-bounds,
power-of-two group scales) and "mxfp4-g32" (e2m1 scalars, power-of-two group
scales).  Everything here is fake quantization: reconstructions come back in
full precision so error can be measured without low-precision arithmetic.
"""

import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._kernels import sum_sq_diff, sum_squares
from .codec import BitwidthReport
from .errors import ValidationError
from .formats import max_level, parse_format, quantize_rtn
from .tensor_io import TensorView


@dataclass(frozen=True)
class BaselineSpec:
    name: str
    scalar_format: object
    group_len: int
    scale_mode: str  # "e8m0" | "vsq-int8" | "none"

    def __post_init__(self):
        if self.group_len <= 0:
            raise ValidationError("group length must be positive")
        if self.scale_mode not in ("e8m0", "vsq-int8", "none"):
            raise ValidationError(f"unknown scale mode: {self.scale_mode!r}")

    @property
    def scale_bits(self) -> int:
        return 0 if self.scale_mode == "none" else 8

    @property
    def bits_per_scalar(self) -> Fraction:
        return Fraction(self.scalar_format.bitwidth) + Fraction(self.scale_bits, self.group_len)


_NAMED = {
    "vsq-g16": ("int4", 16, "vsq-int8"),
    "mx4-g16": ("e1m2", 16, "e8m0"),
    "mxfp4-g32": ("e2m1", 32, "e8m0"),
}

_GENERIC = re.compile(r"^fmt:([a-z0-9]+),g(\d+)(?:,scale:([a-z0-9-]+))?$")


def parse_baseline(name: str) -> BaselineSpec:
    """Resolve "vsq-g16" / "mx4-g16" / "mxfp4-g32" or "fmt:<f>,g<N>,scale:<s>"."""
    key = name.strip().lower()
    if key in _NAMED:
        fmt, g, mode = _NAMED[key]
        return BaselineSpec(key, parse_format(fmt), g, mode)
    m = _GENERIC.match(key)
    if m is None:
        raise ValidationError(f"unknown baseline spec: {name!r}")
    scale = m.group(3) or "e8m0"
    if scale == "int8":
        scale = "vsq-int8"
    return BaselineSpec(key, parse_format(m.group(1)), int(m.group(2)), scale)


def _group_scales(groups: np.ndarray, fmt) -> np.ndarray:
    """Raw per-group max-abs scales (divisors); all-zero groups get 1."""
    peaks = np.max(np.abs(groups), axis=1)
    return np.where(peaks > 0, peaks / max_level(fmt), 1.0)


def quantize_baseline(t: TensorView, spec: BaselineSpec):
    """Fake-quantize ``t`` per ``spec``; returns (reconstruction, bit report).

    Per group: max-abs scale against the scalar format, the scale itself
    quantized per the spec's second level, scalars rounded to the nearest
    level of the scaled format.
    """
    n = t.size
    g = spec.group_len
    padded = -(-n // g) * g
    values = np.zeros(padded, dtype=np.float64)
    values[:n] = t.data
    groups = values.reshape(-1, g)

    raw = _group_scales(groups, spec.scalar_format)
    if spec.scale_mode == "e8m0":
        exps = np.clip(np.floor(np.log2(raw) + 0.5), -127, 127).astype(np.int64)
        scales = np.ldexp(1.0, exps)
    elif spec.scale_mode == "vsq-int8":
        # Second level: each group scale becomes a u8 integer multiple of one
        # per-tensor float scale sized so the largest ratio fits 255.
        tensor_scale = float(np.max(raw)) / 255.0
        ratio = np.clip(np.rint(raw / tensor_scale), 1, 255)
        scales = ratio * tensor_scale
    else:
        scales = raw

    # quantize_rtn(x, fmt, s) == s * quantize_rtn(x / s, fmt, 1) bit-exactly,
    # which lets one vectorized call cover per-group scales.
    per_scalar = np.repeat(scales, g)
    recon = quantize_rtn(values / per_scalar, spec.scalar_format, 1.0) * per_scalar

    report = BitwidthReport(
        effective_bits_per_scalar=spec.bits_per_scalar,
        bcq_bits_per_scalar=Fraction(spec.scalar_format.bitwidth),
    )
    view = TensorView(data=recon[:n].astype(np.float32), shape=t.shape,
                      name=f"{t.name}:{spec.name}")
    return view, report


def nmse(x: TensorView, xhat: TensorView) -> float:
    """Squared reconstruction error normalized by the signal's squared norm."""
    a = np.asarray(x.data if isinstance(x, TensorView) else x, dtype=np.float64).reshape(-1)
    b = np.asarray(xhat.data if isinstance(xhat, TensorView) else xhat, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ValidationError(f"length mismatch: {a.size} vs {b.size}")
    den = float(sum_squares(a))
    if den == 0.0:
        raise ValidationError("reference signal is all zero; NMSE undefined")
    return float(sum_sq_diff(a, b)) / den
