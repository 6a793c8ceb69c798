"""Deterministic random streams.

Every random draw in the package flows from one integer seed through a named
substream backed by the Philox-4x64 counter-based generator.  A substream is
identified by (seed, label path); the raw output is 53-bit uniforms, and all
distributions are derived from those by inverse-CDF transforms, so a stream's
values are fully pinned down by the seed and the draw order.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_key(labels) -> int:
    digest = hashlib.sha256("/".join(str(x) for x in labels).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *labels) -> np.random.Generator:
    """Generator for the substream named by ``labels`` under ``seed``.

    The Philox key packs the seed in the low 64 bits and a hash of the label
    path in the high 64 bits, so distinct labels never share a stream.
    """
    key = (int(seed) & _MASK64) | (_label_key(labels) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def uniform01(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniforms strictly inside (0, 1): (k + 0.5) / 2**53 over 53-bit k."""
    k = rng.integers(0, 1 << 53, size=n, dtype=np.int64)
    return (k + 0.5) * 2.0**-53


def weighted_index(rng: np.random.Generator, weights: np.ndarray) -> int:
    """Draw one index with probability proportional to ``weights``.

    Implemented as a single uniform against the cumulative weight so the
    result depends only on the stream, not on library internals.  All-zero
    weights fall back to a uniform pick.
    """
    cum = np.cumsum(np.asarray(weights, dtype=np.float64))
    total = cum[-1]
    u = uniform01(rng, 1)[0]
    if total <= 0.0:
        return min(int(u * len(cum)), len(cum) - 1)
    return int(np.searchsorted(cum, u * total, side="left"))
