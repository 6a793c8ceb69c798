"""BCQT tensor container, synthetic calibration data, block decomposition.

The container is deliberately trivial: magic "BCQT", version u32, dtype code
u8 (0 = f32 little-endian), ndim u8, dims as u64le, then the raw payload.
Tensors are stored and held as float32, so a load/save round trip is
bit-exact.
"""

import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import (
    BadMagic,
    DataError,
    EmptyTensor,
    NonFiniteInput,
    NotMultiple,
    ShapeMismatch,
    TruncatedPayload,
    ValidationError,
)
from .rng import substream, uniform01

MAGIC = b"BCQT"
VERSION = 1
DTYPE_F32 = 0


@dataclass
class TensorView:
    """A flat float32 array with shape metadata and a layer-identifier name."""

    data: np.ndarray
    shape: tuple
    name: str = ""

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32).reshape(-1)
        self.shape = tuple(int(d) for d in self.shape)
        self.validate()

    def validate(self):
        if len(self.shape) == 0:
            raise EmptyTensor("tensor shape is empty")
        if any(d <= 0 for d in self.shape) or self.data.size == 0:
            raise EmptyTensor("tensor has no scalars")
        n = int(np.prod(self.shape))
        if n != self.data.size:
            raise ShapeMismatch(
                f"shape {self.shape} implies {n} scalars, payload has {self.data.size}"
            )
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteInput("tensor payload contains NaN or Inf")

    @property
    def size(self) -> int:
        return self.data.size


def save_tensor(t: TensorView, path):
    """Write ``t`` to ``path`` in the BCQT container."""
    t.validate()
    header = MAGIC + struct.pack("<IBB", VERSION, DTYPE_F32, len(t.shape))
    dims = b"".join(struct.pack("<Q", d) for d in t.shape)
    payload = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + dims + payload)


def load_tensor(path) -> TensorView:
    """Read a BCQT container; raises a distinct error per malformation."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not a BCQT container")
    if len(raw) < 10:
        raise TruncatedPayload(f"{path}: header truncated")
    version, dtype, ndim = struct.unpack_from("<IBB", raw, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    if dtype != DTYPE_F32:
        raise DataError(f"{path}: unsupported dtype code {dtype}")
    if ndim == 0:
        raise EmptyTensor(f"{path}: empty tensor shape")
    off = 10
    if len(raw) < off + 8 * ndim:
        raise TruncatedPayload(f"{path}: dimension list truncated")
    shape = struct.unpack_from(f"<{ndim}Q", raw, off)
    off += 8 * ndim
    n = int(np.prod(shape)) if all(d > 0 for d in shape) else 0
    if n == 0:
        raise EmptyTensor(f"{path}: zero-length dimension")
    if len(raw) - off < 4 * n:
        raise TruncatedPayload(f"{path}: payload shorter than shape implies")
    if len(raw) - off > 4 * n:
        raise DataError(f"{path}: trailing bytes after payload")
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=off)
    if not np.all(np.isfinite(data)):
        raise NonFiniteInput(f"{path}: payload contains NaN or Inf")
    return TensorView(data=data.copy(), shape=shape, name=Path(path).stem)


# --- synthetic data -------------------------------------------------------

@dataclass(frozen=True)
class DistSpec:
    """Parsed distribution spec, e.g. gaussian(0,1) or uniform(-1,1)."""

    kind: str
    params: tuple

    def __str__(self):
        inner = ",".join(f"{p:g}" for p in self.params)
        return f"{self.kind}({inner})"


_DIST_ARITY = {
    "gaussian": 2,            # mu, sigma
    "laplace": 2,             # mu, b
    "uniform": 2,             # a, b
    "gaussian-with-outliers": 3,  # sigma, outlier_frac, outlier_scale
    "mixture": 0,
}

_DIST_RE = re.compile(r"^\s*([a-z-]+)\s*\(([^)]*)\)\s*$")


def parse_dist(spec: str) -> DistSpec:
    m = _DIST_RE.match(spec.strip().lower())
    if m is None:
        raise ValidationError(f"cannot parse distribution spec: {spec!r}")
    kind, args = m.group(1), m.group(2).strip()
    if kind not in _DIST_ARITY:
        raise ValidationError(f"unknown distribution: {kind!r}")
    params = tuple(float(a) for a in args.split(",")) if args else ()
    if len(params) != _DIST_ARITY[kind]:
        raise ValidationError(
            f"{kind} takes {_DIST_ARITY[kind]} parameters, got {len(params)}"
        )
    return DistSpec(kind, params)


def _gaussian(seed, n, mu, sigma):
    if sigma <= 0:
        raise ValidationError("gaussian sigma must be positive")
    u = uniform01(substream(seed, "synth", "gaussian"), n)
    return mu + sigma * ndtri(u)


def _laplace(seed, n, mu, b):
    if b <= 0:
        raise ValidationError("laplace scale must be positive")
    v = uniform01(substream(seed, "synth", "laplace"), n) - 0.5
    return mu - b * np.sign(v) * np.log1p(-2.0 * np.abs(v))


def _uniform(seed, n, a, b):
    if not b > a:
        raise ValidationError("uniform needs a < b")
    return a + (b - a) * uniform01(substream(seed, "synth", "uniform"), n)


def _gaussian_with_outliers(seed, n, sigma, frac, scale):
    if not (0.0 <= frac <= 1.0):
        raise ValidationError("outlier fraction must be in [0, 1]")
    if scale <= 0:
        raise ValidationError("outlier scale must be positive")
    x = _gaussian(seed, n, 0.0, sigma)
    mask = uniform01(substream(seed, "synth", "outlier-mask"), n) < frac
    x[mask] *= scale
    return x


# Mixture used as the default universal-calibration stand-in: equal thirds of
# gaussian-with-outliers at three outlier regimes.
_MIXTURE_PARTS = (
    (1.0, 0.01, 10.0),
    (1.0, 0.05, 5.0),
    (2.0, 0.02, 20.0),
)


def _mixture(seed, n):
    sizes = [n // 3, n // 3, n - 2 * (n // 3)]
    chunks = []
    for i, ((sigma, frac, scale), m) in enumerate(zip(_MIXTURE_PARTS, sizes)):
        if m == 0:
            continue
        sub = substream(seed, "synth", "mixture", i)
        x = sigma * ndtri(uniform01(sub, m))
        mask = uniform01(substream(seed, "synth", "mixture-mask", i), m) < frac
        x[mask] *= scale
        chunks.append(x)
    return np.concatenate(chunks)


def synth_tensor(dist, n: int, seed: int) -> TensorView:
    """Deterministic synthetic tensor of ``n`` scalars from ``dist`` and ``seed``."""
    if isinstance(dist, str):
        dist = parse_dist(dist)
    if n <= 0:
        raise ValidationError("sample count must be positive")
    if dist.kind == "gaussian":
        x = _gaussian(seed, n, *dist.params)
    elif dist.kind == "laplace":
        x = _laplace(seed, n, *dist.params)
    elif dist.kind == "uniform":
        x = _uniform(seed, n, *dist.params)
    elif dist.kind == "gaussian-with-outliers":
        x = _gaussian_with_outliers(seed, n, *dist.params)
    elif dist.kind == "mixture":
        x = _mixture(seed, n)
    else:  # pragma: no cover - parse_dist rejects these
        raise ValidationError(f"unknown distribution: {dist.kind}")
    return TensorView(data=x.astype(np.float32), shape=(n,), name=f"{dist}-s{seed}")


# --- block decomposition --------------------------------------------------

@dataclass
class BlockDecomposition:
    """Zero-padded flat view of a tensor split into blocks and block arrays.

    Blocks are consecutive runs along the flattened innermost axis (the
    reduction dimension).  ``values`` holds the padded data in float64;
    the final ``pad`` scalars are zeros that must stay out of error
    statistics and calibration sets.
    """

    block_len: int
    array_len: int
    num_blocks: int
    num_arrays: int
    pad: int
    values: np.ndarray
    orig_len: int

    def arrays(self) -> np.ndarray:
        return self.values.reshape(self.num_arrays, self.array_len)

    def blocks(self) -> np.ndarray:
        return self.values.reshape(self.num_blocks, self.block_len)

    @property
    def num_full_blocks(self) -> int:
        """Blocks that contain no padding (usable for calibration)."""
        return self.orig_len // self.block_len


def decompose(t: TensorView, block_len: int, array_len: int) -> BlockDecomposition:
    """Split ``t`` into blocks of ``block_len`` grouped into arrays of ``array_len``."""
    if block_len <= 0 or array_len <= 0:
        raise ValidationError("block and array lengths must be positive")
    if array_len % block_len != 0:
        raise NotMultiple(
            f"array length {array_len} is not a multiple of block length {block_len}"
        )
    n = t.size
    padded = -(-n // array_len) * array_len
    values = np.zeros(padded, dtype=np.float64)
    values[:n] = t.data
    return BlockDecomposition(
        block_len=block_len,
        array_len=array_len,
        num_blocks=padded // block_len,
        num_arrays=padded // array_len,
        pad=padded - n,
        values=values,
        orig_len=n,
    )
