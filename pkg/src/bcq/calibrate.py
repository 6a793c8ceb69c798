"""Codebook family calibration for block clustered quantization.

Calibration alternates two locally optimal steps: (1) map every block to the
codebook that reconstructs it with least squared error, (2) refit each
cluster's codebook with Lloyd-Max warm-started from the previous codewords.
Each step can only lower the total quantization MSE, so the per-iteration
error trace is non-increasing (outside logged empty-cluster re-seeds).

Blocks are calibrated in the normalized domain: each block array is scaled so
its peak magnitude lands on the top codeword integer, which is what lets the
finished codebooks be frozen to small integers and shared across tensors.
"""

import json
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import (
    LUT_BINS,
    assigned_sse,
    build_search_base,
    kahan_sum,
    nearest_level_sse,
)
from .errors import DataError, NotMultiple, ValidationError
from .lloydmax import lloyd_max
from .lloydmax import polish as lm_polish
from .rng import substream, uniform01, weighted_index
from .tensor_io import BlockDecomposition, TensorView, decompose

log = logging.getLogger(__name__)

FAMILY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class QuantConfig:
    """Quantizer geometry: block/array lengths, codebook count, bit budgets."""

    block_len: int
    array_len: int
    num_codebooks: int
    bits: int
    scale_bits: int = 8
    codeword_bits: int = 6
    max_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.block_len < 1 or self.array_len < 1:
            raise ValidationError("block and array lengths must be positive")
        if self.array_len % self.block_len != 0:
            raise NotMultiple(
                f"array length {self.array_len} is not a multiple of "
                f"block length {self.block_len}"
            )
        nc = self.num_codebooks
        if nc < 1 or nc & (nc - 1) != 0:
            raise ValidationError("number of codebooks must be a power of two")
        if not 1 <= self.bits <= 6:
            raise ValidationError("scalar index bits must be in 1..6")
        if self.scale_bits != 8:
            raise ValidationError("only 8-bit (e4m3) array scales are supported")
        if not 2 <= self.codeword_bits <= 8:
            raise ValidationError("codeword bits must be in 2..8")
        if self.max_iters < 1:
            raise ValidationError("at least one calibration iteration required")

    @property
    def selector_bits(self) -> int:
        return self.num_codebooks.bit_length() - 1

    @property
    def levels(self) -> int:
        return 2**self.bits

    @property
    def codeword_limit(self) -> int:
        return 2 ** (self.codeword_bits - 1) - 1


@dataclass
class CodebookFamily:
    """A set of codebooks; every block encodes through exactly one of them."""

    books: list
    bits: int
    codeword_bits: int = 6
    block_len: int = 8
    frozen: bool = False

    def __post_init__(self):
        self.books = [np.asarray(b, dtype=np.float64) for b in self.books]
        self.validate()

    def validate(self):
        if not self.books:
            raise ValidationError("family has no codebooks")
        k = 2**self.bits
        limit = 2 ** (self.codeword_bits - 1) - 1
        for i, b in enumerate(self.books):
            if b.size != k:
                raise ValidationError(f"codebook {i} has {b.size} entries, expected {k}")
            if np.any(np.diff(b) < 0):
                raise ValidationError(f"codebook {i} is not sorted")
            if self.frozen:
                if not np.all(b == np.rint(b)):
                    raise ValidationError(f"frozen codebook {i} has non-integer entries")
                if np.any(np.abs(b) > limit):
                    raise ValidationError(f"frozen codebook {i} exceeds +/-{limit}")

    @property
    def num_codebooks(self) -> int:
        return len(self.books)

    def matrix(self) -> np.ndarray:
        return np.vstack(self.books)

    @property
    def payload_bytes(self) -> float:
        """Storage footprint of the codeword table itself."""
        bits = self.num_codebooks * 2**self.bits * self.codeword_bits
        return bits / 8

    def to_dict(self) -> dict:
        cast = int if self.frozen else float
        return {
            "version": FAMILY_FORMAT_VERSION,
            "B": self.bits,
            "Bc": self.codeword_bits,
            "Nc": self.num_codebooks,
            "Lb": self.block_len,
            "frozen": self.frozen,
            "codebooks": [[cast(v) for v in b] for b in self.books],
        }

    def content_hash(self) -> int:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return int.from_bytes(hashlib.sha256(canon.encode()).digest()[:8], "little")


@dataclass
class CalibTrace:
    """Per-iteration record of a calibration run."""

    mse_per_iteration: list = field(default_factory=list)
    cluster_sizes: list = field(default_factory=list)
    reseed_iterations: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    warning: str = None

    def to_dict(self) -> dict:
        return {
            "mse_per_iteration": self.mse_per_iteration,
            "cluster_sizes": self.cluster_sizes,
            "reseed_iterations": self.reseed_iterations,
            "iterations": self.iterations,
            "converged": self.converged,
            "warning": self.warning,
        }


@dataclass
class NormalizedBlocks:
    """Blocks scaled into the integer codeword range, plus the raw array scales."""

    blocks: np.ndarray        # (num_blocks, block_len), padded tail included
    calib_blocks: np.ndarray  # rows free of padding, for calibration use
    scales: np.ndarray        # raw per-array multipliers
    decomp: BlockDecomposition


def array_scales(arrays: np.ndarray, codeword_bits: int) -> np.ndarray:
    """Per-array multiplier mapping peak magnitude to the top codeword integer.

    All-zero arrays get scale 1 so they pass through unchanged.
    """
    limit = float(2 ** (codeword_bits - 1) - 1)
    peaks = np.max(np.abs(arrays), axis=-1)
    return np.where(peaks > 0, limit / np.where(peaks > 0, peaks, 1.0), 1.0)


def normalize_blocks(t: TensorView, cfg: QuantConfig) -> NormalizedBlocks:
    """Decompose ``t`` and scale each block array into the codeword range."""
    decomp = decompose(t, cfg.block_len, cfg.array_len)
    arrays = decomp.arrays()
    scales = array_scales(arrays, cfg.codeword_bits)
    normalized = (arrays * scales[:, None]).reshape(decomp.num_blocks, cfg.block_len)
    return NormalizedBlocks(
        blocks=normalized,
        calib_blocks=normalized[: decomp.num_full_blocks],
        scales=scales,
        decomp=decomp,
    )


def _nearest(book: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Indices of the nearest codeword per value; ties go to the lower index."""
    thresholds = 0.5 * (book[:-1] + book[1:])
    return np.searchsorted(thresholds, values, side="left")


def _search_tables(matrix: np.ndarray, data_range) -> tuple:
    """Midpoint thresholds plus the uniform-grid search table for the kernels."""
    thresholds = np.ascontiguousarray(0.5 * (matrix[:, :-1] + matrix[:, 1:]))
    lo = min(float(data_range[0]), -32.0)
    hi = max(float(data_range[1]), 32.0)
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / LUT_BINS
    base = np.empty((matrix.shape[0], LUT_BINS), dtype=np.int64)
    build_search_base(thresholds, lo, step, step * 1e-9, base)
    return thresholds, base, lo, 1.0 / step


def map_blocks(blocks: np.ndarray, books, hint=None, data_range=None) -> tuple:
    """Assign every block to its least-SSE codebook.

    Returns (assignments, per-block SSE under the chosen book).  Ties pick
    the lowest codebook index.  ``hint`` optionally seeds the search with a
    starting assignment and ``data_range`` caches (min, max) of the blocks;
    both speed the search up without changing the result.
    """
    blocks = np.ascontiguousarray(np.atleast_2d(np.asarray(blocks, dtype=np.float64)))
    n = blocks.shape[0]
    matrix = np.ascontiguousarray(np.vstack(books))
    if data_range is None:
        data_range = (blocks.min(), blocks.max())
    thresholds, base, grid_lo, inv_step = _search_tables(matrix, data_range)
    if hint is None:
        hint = np.zeros(n, dtype=np.int64)
    assignments = np.empty(n, dtype=np.int64)
    sse = np.empty(n, dtype=np.float64)
    nearest_level_sse(
        blocks, matrix, thresholds, base, grid_lo, inv_step, hint, assignments, sse
    )
    return assignments, sse


def map_block(block, family) -> int:
    """Cluster index of the codebook that reconstructs ``block`` best."""
    books = family.books if isinstance(family, CodebookFamily) else list(family)
    if not books:
        raise ValidationError("family has no codebooks")
    choice, _ = map_blocks(np.atleast_2d(np.asarray(block, dtype=np.float64)), books)
    return int(choice[0])


def _kmeanspp_seed_rows(blocks: np.ndarray, count: int, rng) -> list:
    """D^2-sampled block indices: each pick favors blocks far from the chosen."""
    n = blocks.shape[0]
    first = weighted_index(rng, np.ones(n))
    picks = [first]
    d2 = np.sum((blocks - blocks[first]) ** 2, axis=1)
    for _ in range(count - 1):
        j = weighted_index(rng, d2)
        picks.append(j)
        d2 = np.minimum(d2, np.sum((blocks - blocks[j]) ** 2, axis=1))
    return picks


def init_family(blocks, cfg: QuantConfig, init: str = "kmeans++") -> list:
    """Iteration-0 codebooks.

    "kmeans++" draws seed blocks by D^2 sampling over *sorted* block vectors
    (sorting makes the distance permutation-invariant, so blocks with similar
    value distributions seed together regardless of scalar order), groups
    every block with its nearest seed, and runs Lloyd-Max on each group's
    scalars.  "random" draws uniform codewords in the codeword range, kept
    only as the naive baseline for initialization-quality comparisons.
    """
    blocks = np.atleast_2d(np.asarray(blocks, dtype=np.float64))
    n = blocks.shape[0]
    nc = cfg.num_codebooks
    if init == "random":
        rng = substream(cfg.seed, "random-init")
        limit = float(cfg.codeword_limit)
        return [
            np.sort(limit * (2.0 * uniform01(rng, cfg.levels) - 1.0)) for _ in range(nc)
        ]
    if init != "kmeans++":
        raise ValidationError(f"unknown init scheme: {init!r}")
    if n < nc:
        raise ValidationError(f"need at least {nc} blocks to seed {nc} codebooks")
    rng = substream(cfg.seed, "kmeans++")
    profiles = np.sort(blocks, axis=1)
    picks = _kmeanspp_seed_rows(profiles, nc, rng)
    seed_mat = profiles[picks]
    groups = np.empty(n, dtype=np.int64)
    step = 1 << 14
    for a in range(0, n, step):
        chunk = profiles[a : a + step]
        d = np.sum((chunk[:, None, :] - seed_mat[None, :, :]) ** 2, axis=2)
        groups[a : a + chunk.shape[0]] = np.argmin(d, axis=1)
    books = []
    for i in range(nc):
        scalars = blocks[groups == i].reshape(-1)
        if scalars.size == 0:  # duplicate seed blocks
            scalars = blocks[picks[i]]
        books.append(lloyd_max(scalars, cfg.bits).levels)
    return books


def _cluster_order(assignments: np.ndarray, num_clusters: int):
    """Stable grouping of block indices by cluster: (order, boundaries)."""
    order = np.argsort(assignments, kind="stable")
    bounds = np.searchsorted(assignments[order], np.arange(num_clusters + 1))
    return order, bounds


def _fit_cluster(scalars, bits: int, warm_book, strong: bool):
    """Codebook update: warm-started Lloyd-Max, optionally with local search."""
    warm = lloyd_max(scalars, bits, init=warm_book)
    if not strong:
        return warm.levels
    refined = lm_polish(scalars, bits, warm)
    return refined.levels if refined.mse <= warm.mse else warm.levels


def _cluster_sse(scalars, book) -> float:
    r = scalars - book[_nearest(book, scalars)]
    return float(kahan_sum(r * r))


def _swap_pass(blocks, books, assignments, bits: int) -> bool:
    """Move one block to another cluster if refitting both books lowers SSE.

    First-improvement scan in fixed order; applies at most one move.  Moves
    that would empty a cluster are skipped.
    """
    n, nc = blocks.shape[0], len(books)
    sizes = np.bincount(assignments, minlength=nc)
    for b in range(n):
        cur = int(assignments[b])
        if sizes[cur] <= 1:
            continue
        idx = np.arange(n)
        scal_cur_old = blocks[assignments == cur].reshape(-1)
        scal_cur_new = blocks[(assignments == cur) & (idx != b)].reshape(-1)
        for c in range(nc):
            if c == cur:
                continue
            scal_c_old = blocks[assignments == c].reshape(-1)
            scal_c_new = np.concatenate([scal_c_old, blocks[b]])
            old = _cluster_sse(scal_cur_old, books[cur]) + _cluster_sse(scal_c_old, books[c])
            book_cur = _fit_cluster(scal_cur_new, bits, books[cur], strong=True)
            book_c = _fit_cluster(scal_c_new, bits, books[c], strong=True)
            new = _cluster_sse(scal_cur_new, book_cur) + _cluster_sse(scal_c_new, book_c)
            if new < old * (1 - 1e-13):
                books[cur], books[c] = book_cur, book_c
                assignments[b] = c
                return True
    return False


def calibrate(blocks, cfg: QuantConfig, init: str = "kmeans++", init_books=None,
              refine: str = "none"):
    """Run the two-step calibration loop on normalized ``blocks``.

    Returns (family, trace); the family is still in the real-valued domain,
    freeze it before use with the codec.  ``init_books`` overrides the
    initialization with caller-supplied iteration-0 codebooks.

    ``refine="swap"`` strengthens the loop for small calibration sets: the
    per-cluster refits add a local search around each Lloyd-Max fixed point,
    and at every assignment fixpoint single blocks are tentatively moved
    between clusters, keeping strict improvements.  The error trace stays
    non-increasing and results stay deterministic; the cost scales with
    blocks x clusters, so leave it off for production-size runs.
    """
    blocks = np.ascontiguousarray(np.atleast_2d(np.asarray(blocks, dtype=np.float64)))
    n, width = blocks.shape
    if n == 0:
        raise ValidationError("cannot calibrate on an empty block set")
    if width != cfg.block_len:
        raise ValidationError(
            f"blocks have width {width}, config says {cfg.block_len}"
        )
    if refine not in ("none", "swap"):
        raise ValidationError(f"unknown refine mode: {refine!r}")
    strong = refine == "swap"
    if init_books is not None:
        books = [np.sort(np.asarray(b, dtype=np.float64)) for b in init_books]
        if len(books) != cfg.num_codebooks:
            raise ValidationError("init_books count must match the codebook count")
    else:
        books = init_family(blocks, cfg, init=init)
    total_scalars = blocks.size
    nc = cfg.num_codebooks

    trace = CalibTrace()
    prev_assign = None
    data_range = (blocks.min(), blocks.max())
    for it in range(1, cfg.max_iters + 1):
        assignments, block_sse = map_blocks(
            blocks, books, hint=prev_assign, data_range=data_range
        )

        # Revive clusters that lost every block: re-seed each from the block
        # the family currently reconstructs worst, then hand it that block.
        reseeded = False
        sizes = np.bincount(assignments, minlength=nc)
        for i in np.flatnonzero(sizes == 0):
            worst = int(np.argmax(block_sse))
            books[i] = lloyd_max(blocks[worst], cfg.bits).levels
            assignments[worst] = i
            block_sse[worst] = 0.0
            sizes = np.bincount(assignments, minlength=nc)
            reseeded = True
        if reseeded:
            trace.reseed_iterations.append(it)
            log.warning("calibration iteration %d: re-seeded empty cluster(s)", it)

        changed = prev_assign is None or bool(np.any(assignments != prev_assign))

        order, bounds = _cluster_order(assignments, nc)
        for i in range(nc):
            rows = order[bounds[i] : bounds[i + 1]]
            if rows.size == 0:
                continue  # only possible in degenerate re-seed loops
            scalars = blocks[rows].reshape(-1)
            books[i] = _fit_cluster(scalars, cfg.bits, books[i], strong=strong)

        # MSE after the update, accumulated in block order.
        matrix = np.ascontiguousarray(np.vstack(books))
        thresholds, base, grid_lo, inv_step = _search_tables(matrix, data_range)
        sse_after = np.empty(n, dtype=np.float64)
        assigned_sse(
            blocks, matrix, thresholds, base, grid_lo, inv_step, assignments, sse_after
        )
        j_n = float(kahan_sum(sse_after)) / total_scalars

        trace.mse_per_iteration.append(j_n)
        trace.cluster_sizes.append([int(s) for s in sizes])
        trace.iterations = it

        if reseeded and len(trace.mse_per_iteration) >= 2:
            prev_j = trace.mse_per_iteration[-2]
            if it - 1 in trace.reseed_iterations and not j_n < prev_j:
                trace.warning = (
                    "degenerate data: a cluster stays empty after re-seeding; "
                    "calibration terminated early"
                )
                log.warning(trace.warning)
                break
        if not changed:
            if strong and _swap_pass(blocks, books, assignments, cfg.bits):
                prev_assign = assignments
                continue
            trace.converged = True
            break
        prev_assign = assignments

    family = CodebookFamily(
        books=[b.copy() for b in books],
        bits=cfg.bits,
        codeword_bits=cfg.codeword_bits,
        block_len=cfg.block_len,
        frozen=False,
    )
    return family, trace


def calibrate_tensor(
    t: TensorView,
    cfg: QuantConfig,
    init: str = "kmeans++",
    init_books=None,
    sample_blocks: int = None,
    refine: str = "none",
):
    """Normalize ``t`` and calibrate on its padding-free blocks.

    ``sample_blocks`` caps the calibration set with a seeded uniform
    subsample; the default uses every block.
    """
    norm = normalize_blocks(t, cfg)
    blocks = norm.calib_blocks
    if sample_blocks is not None and sample_blocks < blocks.shape[0]:
        rng = substream(cfg.seed, "block-sample")
        keep = np.sort(rng.permutation(blocks.shape[0])[:sample_blocks])
        blocks = blocks[keep]
    return calibrate(blocks, cfg, init=init, init_books=init_books, refine=refine)


def freeze_family(family: CodebookFamily) -> CodebookFamily:
    """Round codewords to integers in the codeword range (ties to even)."""
    limit = 2 ** (family.codeword_bits - 1) - 1
    books = [np.clip(np.rint(b), -limit, limit) for b in family.books]
    return CodebookFamily(
        books=books,
        bits=family.bits,
        codeword_bits=family.codeword_bits,
        block_len=family.block_len,
        frozen=True,
    )


def save_family(family: CodebookFamily, path):
    Path(path).write_text(json.dumps(family.to_dict(), indent=2) + "\n")


def load_family(path) -> CodebookFamily:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: malformed family file: {e}") from e
    try:
        version = doc["version"]
        if version != FAMILY_FORMAT_VERSION:
            raise DataError(f"{path}: unsupported family version {version}")
        family = CodebookFamily(
            books=doc["codebooks"],
            bits=doc["B"],
            codeword_bits=doc["Bc"],
            block_len=doc["Lb"],
            frozen=doc["frozen"],
        )
        if doc["Nc"] != family.num_codebooks:
            raise ValidationError("Nc field disagrees with the codebook list")
    except (KeyError, TypeError) as e:
        raise DataError(f"{path}: malformed family file: missing {e}") from e
    except ValidationError as e:
        raise DataError(f"{path}: invalid family: {e}") from e
    return family
