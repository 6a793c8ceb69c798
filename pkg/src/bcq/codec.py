"""Bit-exact encoder/decoder for the block-clustered stream format.

Stream layout ("BCQC"): header (magic, version, config echo, shape, pad
count, family hash, per-tensor scale), then one e4m3 scale byte per block
array, then per-block codebook selectors and per-scalar codeword indices
packed back to back, little-endian bit order within each byte.

Scaling is two-level: a per-tensor float32 scale places the largest raw
array scale exactly on e4m3's top level (448), and each array stores the
e4m3-rounded ratio.  Encoding normalizes by the *dequantized* effective
scale, so decoding is its exact inverse.
"""

import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .calibrate import (
    CodebookFamily,
    QuantConfig,
    _cluster_order,
    _nearest,
    array_scales,
    map_blocks,
)
from .errors import CorruptStream, DataError, FamilyMismatch, ValidationError
from .formats import E4M3, codepoints, max_level, quantize_rtn
from .tensor_io import TensorView, decompose

STREAM_MAGIC = b"BCQC"
STREAM_VERSION = 1

_E4M3_MAGS = np.array([p[0] for p in codepoints(E4M3)], dtype=np.float64)
_E4M3_FIELDS = np.array([(p[1] << 3) | p[2] for p in codepoints(E4M3)], dtype=np.uint8)
_E4M3_VALUE = np.full(256, np.nan)
for _mag, _e, _m in codepoints(E4M3):
    _E4M3_VALUE[(_e << 3) | _m] = _mag
    _E4M3_VALUE[0x80 | (_e << 3) | _m] = -_mag


def _e4m3_bytes(values: np.ndarray) -> np.ndarray:
    """Quantize positive scale ratios to e4m3 and emit sign/exp/man bytes.

    A ratio that would round to zero is clamped to the smallest positive
    magnitude so the decoder never divides by zero.
    """
    q = np.asarray(quantize_rtn(values, E4M3), dtype=np.float64).reshape(-1)
    q = np.where((q == 0.0) & (np.asarray(values).reshape(-1) > 0), _E4M3_MAGS[1], q)
    pos = np.searchsorted(_E4M3_MAGS, np.abs(q))
    out = _E4M3_FIELDS[pos] | np.where(q < 0, 0x80, 0).astype(np.uint8)
    return out.astype(np.uint8)


def _e4m3_values(scale_bytes: np.ndarray) -> np.ndarray:
    vals = _E4M3_VALUE[np.asarray(scale_bytes, dtype=np.uint8)]
    if np.any(np.isnan(vals)):
        raise CorruptStream("stream holds a NaN scale byte")
    return vals


@dataclass
class EncodedTensor:
    """In-memory form of an encoded stream; serialize with ``dump_stream``."""

    cfg: QuantConfig
    shape: tuple
    pad: int
    family_hash: int
    tensor_scale: float
    scale_bytes: np.ndarray
    selectors: np.ndarray
    indices: np.ndarray

    @property
    def padded_len(self) -> int:
        return int(self.indices.size)

    @property
    def scale_section_bits(self) -> int:
        return int(self.scale_bytes.size) * self.cfg.scale_bits

    @property
    def selector_section_bits(self) -> int:
        return int(self.selectors.size) * self.cfg.selector_bits

    @property
    def index_section_bits(self) -> int:
        return int(self.indices.size) * self.cfg.bits

    @property
    def payload_bits(self) -> int:
        return self.scale_section_bits + self.selector_section_bits + self.index_section_bits


def tensor_scale(t: TensorView, cfg: QuantConfig) -> float:
    """Per-tensor scale: the largest raw array scale divided by max(e4m3).

    Guarantees every per-array ratio fits e4m3's range, with the largest
    landing exactly on 448.  Returned at float32 precision, as stored.
    """
    decomp = decompose(t, cfg.block_len, cfg.array_len)
    raw = array_scales(decomp.arrays(), cfg.codeword_bits)
    return _tensor_scale_from_raw(raw)


def _tensor_scale_from_raw(raw_scales: np.ndarray) -> float:
    s = np.float32(np.max(raw_scales) / max_level(E4M3))
    if not (s > 0 and np.isfinite(s)):
        raise DataError("tensor dynamic range too extreme for the scale format")
    return float(s)


def encode(t: TensorView, family: CodebookFamily, cfg: QuantConfig, scales=None) -> EncodedTensor:
    """Encode ``t`` against a frozen codebook family.

    ``scales`` optionally supplies (tensor_scale, scale_bytes) from a prior
    encode so static-weight workflows can pin normalization; by default both
    are recomputed from the data.
    """
    if not family.frozen:
        raise ValidationError("encoding requires a frozen codebook family")
    if (
        family.bits != cfg.bits
        or family.block_len != cfg.block_len
        or family.num_codebooks != cfg.num_codebooks
    ):
        raise ValidationError(
            "config/family mismatch: "
            f"family is B={family.bits} Lb={family.block_len} Nc={family.num_codebooks}, "
            f"config says B={cfg.bits} Lb={cfg.block_len} Nc={cfg.num_codebooks}"
        )
    decomp = decompose(t, cfg.block_len, cfg.array_len)
    arrays = decomp.arrays()
    if scales is None:
        raw = array_scales(arrays, cfg.codeword_bits)
        s_x = _tensor_scale_from_raw(raw)
        scale_bytes = _e4m3_bytes(raw / s_x)
    else:
        s_x, scale_bytes = scales
        s_x = float(np.float32(s_x))
        scale_bytes = np.asarray(scale_bytes, dtype=np.uint8)
        if scale_bytes.size != decomp.num_arrays:
            raise ValidationError("reused scales do not match the array count")

    effective = _e4m3_values(scale_bytes) * s_x
    normalized = (arrays * effective[:, None]).reshape(decomp.num_blocks, cfg.block_len)

    selectors, _ = map_blocks(normalized, family.books)
    indices = np.empty(decomp.num_blocks * cfg.block_len, dtype=np.int64)
    by_block = indices.reshape(decomp.num_blocks, cfg.block_len)
    order, bounds = _cluster_order(selectors, cfg.num_codebooks)
    for i in range(cfg.num_codebooks):
        rows = order[bounds[i] : bounds[i + 1]]
        if rows.size == 0:
            continue
        by_block[rows] = _nearest(family.books[i], normalized[rows].reshape(-1)).reshape(
            rows.size, cfg.block_len
        )
    return EncodedTensor(
        cfg=cfg,
        shape=t.shape,
        pad=decomp.pad,
        family_hash=family.content_hash(),
        tensor_scale=s_x,
        scale_bytes=scale_bytes,
        selectors=selectors.astype(np.int64),
        indices=indices,
    )


def decode(e: EncodedTensor, family: CodebookFamily) -> TensorView:
    """Invert ``encode``: codeword lookup divided by the effective scale."""
    if not family.frozen:
        raise ValidationError("decoding requires a frozen codebook family")
    if family.content_hash() != e.family_hash:
        raise FamilyMismatch(
            "stream was encoded with a different codebook family "
            f"(stream {e.family_hash:#018x}, family {family.content_hash():#018x})"
        )
    cfg = e.cfg
    if np.any(e.selectors >= cfg.num_codebooks) or np.any(e.selectors < 0):
        raise CorruptStream("selector out of range")
    if np.any(e.indices >= cfg.levels) or np.any(e.indices < 0):
        raise CorruptStream("codeword index out of range")
    matrix = family.matrix()
    per_scalar_sel = np.repeat(e.selectors, cfg.block_len)
    codewords = matrix[per_scalar_sel, e.indices]
    effective = _e4m3_values(e.scale_bytes) * e.tensor_scale
    values = codewords / np.repeat(effective, cfg.array_len)
    n = int(np.prod(e.shape))
    return TensorView(data=values[:n].astype(np.float32), shape=e.shape, name="decoded")


# --- serialization --------------------------------------------------------

def _pack_value_bits(values: np.ndarray, width: int) -> np.ndarray:
    """Bit array of each value's ``width`` bits, LSB first per value."""
    if width == 0 or values.size == 0:
        return np.zeros(0, dtype=np.uint8)
    v = values.astype(np.uint64)[:, None]
    return ((v >> np.arange(width, dtype=np.uint64)) & 1).astype(np.uint8).reshape(-1)


def _unpack_value_bits(bits: np.ndarray, width: int, count: int) -> np.ndarray:
    if width == 0 or count == 0:
        return np.zeros(count, dtype=np.int64)
    field = bits[: count * width].reshape(count, width).astype(np.int64)
    return field @ (1 << np.arange(width, dtype=np.int64))


def dump_stream(e: EncodedTensor) -> bytes:
    cfg = e.cfg
    header = STREAM_MAGIC + struct.pack(
        "<HHHBBBBB",
        STREAM_VERSION,
        cfg.block_len,
        cfg.array_len,
        cfg.num_codebooks,
        cfg.bits,
        cfg.scale_bits,
        cfg.codeword_bits,
        len(e.shape),
    )
    header += b"".join(struct.pack("<Q", d) for d in e.shape)
    header += struct.pack("<IQf", e.pad, e.family_hash, e.tensor_scale)
    bits = np.concatenate(
        [
            _pack_value_bits(e.selectors, cfg.selector_bits),
            _pack_value_bits(e.indices, cfg.bits),
        ]
    )
    return header + e.scale_bytes.tobytes() + np.packbits(bits, bitorder="little").tobytes()


def parse_stream(raw: bytes) -> EncodedTensor:
    if len(raw) < 4 or raw[:4] != STREAM_MAGIC:
        raise CorruptStream("not a BCQC stream")
    try:
        version, lb, la, nc, bits, bs, bc, ndim = struct.unpack_from("<HHHBBBBB", raw, 4)
    except struct.error as exc:
        raise CorruptStream("stream header truncated") from exc
    if version != STREAM_VERSION:
        raise CorruptStream(f"unsupported stream version {version}")
    off = 4 + struct.calcsize("<HHHBBBBB")
    if len(raw) < off + 8 * ndim + 16:
        raise CorruptStream("stream header truncated")
    shape = struct.unpack_from(f"<{ndim}Q", raw, off)
    off += 8 * ndim
    pad, family_hash, s_x = struct.unpack_from("<IQf", raw, off)
    off += 16
    try:
        cfg = QuantConfig(block_len=lb, array_len=la, num_codebooks=nc, bits=bits,
                          scale_bits=bs, codeword_bits=bc)
    except ValidationError as exc:
        raise CorruptStream(f"stream header holds an invalid config: {exc}") from exc
    n = int(np.prod(shape)) if ndim else 0
    if n <= 0:
        raise CorruptStream("stream header holds an empty shape")
    padded = n + pad
    if padded % la != 0 or pad >= la:
        raise CorruptStream("stream pad count inconsistent with the array length")
    num_arrays = padded // la
    num_blocks = padded // lb
    if len(raw) < off + num_arrays:
        raise CorruptStream("stream scale section truncated")
    scale_bytes = np.frombuffer(raw, dtype=np.uint8, count=num_arrays, offset=off).copy()
    off += num_arrays
    nbits = num_blocks * cfg.selector_bits + padded * bits
    nbytes = -(-nbits // 8)
    if len(raw) - off < nbytes:
        raise CorruptStream("stream bit section truncated")
    if len(raw) - off > nbytes:
        raise CorruptStream("trailing bytes after the bit section")
    bit_arr = np.unpackbits(
        np.frombuffer(raw, dtype=np.uint8, offset=off), bitorder="little"
    )
    selectors = _unpack_value_bits(bit_arr, cfg.selector_bits, num_blocks)
    indices = _unpack_value_bits(bit_arr[num_blocks * cfg.selector_bits :], bits, padded)
    if np.any(bit_arr[nbits:]):
        raise CorruptStream("nonzero padding bits at the end of the stream")
    return EncodedTensor(
        cfg=cfg,
        shape=shape,
        pad=pad,
        family_hash=family_hash,
        tensor_scale=float(s_x),
        scale_bytes=scale_bytes,
        selectors=selectors,
        indices=indices,
    )


def write_stream(e: EncodedTensor, path):
    Path(path).write_bytes(dump_stream(e))


def read_stream(path) -> EncodedTensor:
    return parse_stream(Path(path).read_bytes())


# --- bitwidth accounting --------------------------------------------------

@dataclass
class BitwidthReport:
    """Exact per-scalar bit accounting for a quantizer configuration."""

    effective_bits_per_scalar: Fraction
    bcq_bits_per_scalar: Fraction
    codebook_overhead_bits: Fraction = None
    measured_stream_bits: int = None

    @property
    def total_bits_per_scalar(self) -> Fraction:
        if self.codebook_overhead_bits is None:
            return self.effective_bits_per_scalar
        return self.effective_bits_per_scalar + self.codebook_overhead_bits


def effective_bitwidth(cfg: QuantConfig, total_scalars: int = None,
                       measured_bits: int = None) -> BitwidthReport:
    """Rational bits-per-scalar accounting.

    ``effective_bits_per_scalar`` amortizes selectors and array scales;
    ``bcq_bits_per_scalar`` counts only scalar indices plus selectors; the
    codebook table overhead is reported separately when the tensor length is
    known, since it is amortized over the whole tensor.
    """
    base = Fraction(cfg.bits) + Fraction(cfg.selector_bits, cfg.block_len)
    eff = base + Fraction(cfg.scale_bits, cfg.array_len)
    overhead = None
    if total_scalars is not None:
        if total_scalars <= 0:
            raise ValidationError("total_scalars must be positive")
        overhead = Fraction(
            cfg.num_codebooks * cfg.levels * cfg.codeword_bits, total_scalars
        )
    return BitwidthReport(
        effective_bits_per_scalar=eff,
        bcq_bits_per_scalar=base,
        codebook_overhead_bits=overhead,
        measured_stream_bits=measured_bits,
    )


def compression_factor(weight_scalars: int, act_scalars: int,
                       weight_bits, act_bits) -> float:
    """Total quantized operand bits relative to a 16-bit baseline."""
    if weight_scalars <= 0 or act_scalars <= 0:
        raise ValidationError("operand sizes must be positive")
    num = Fraction(act_scalars) * Fraction(act_bits) + Fraction(weight_scalars) * Fraction(weight_bits)
    den = Fraction(act_scalars + weight_scalars) * 16
    return float(num / den)
