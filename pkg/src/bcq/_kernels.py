"""Compensated (Neumaier) summation kernels.

These run sequentially in a fixed order with a running compensation term, so
results are bit-identical across platforms and well inside the 2-ulp-per-add
error contract the calibration statistics rely on.  numba compiles them
without fastmath, which keeps the IEEE evaluation order intact.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def kahan_sum(values):
    s = 0.0
    c = 0.0
    for v in values:
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
    return s + c


@njit(cache=True)
def segment_sums(values, bounds):
    """Per-segment compensated sums; segment i is values[bounds[i]:bounds[i+1]]."""
    k = len(bounds) - 1
    out = np.empty(k, dtype=np.float64)
    for i in range(k):
        s = 0.0
        c = 0.0
        for j in range(bounds[i], bounds[i + 1]):
            v = values[j]
            t = s + v
            if abs(s) >= abs(v):
                c += (s - t) + v
            else:
                c += (v - t) + s
            s = t
        out[i] = s + c
    return out


@njit(cache=True)
def segment_sse(values, levels, bounds):
    """Per-segment compensated sums of (value - level)^2."""
    k = len(bounds) - 1
    out = np.empty(k, dtype=np.float64)
    for i in range(k):
        s = 0.0
        c = 0.0
        li = levels[i]
        for j in range(bounds[i], bounds[i + 1]):
            d = values[j] - li
            v = d * d
            t = s + v
            if abs(s) >= abs(v):
                c += (s - t) + v
            else:
                c += (v - t) + s
            s = t
        out[i] = s + c
    return out


@njit(cache=True)
def sum_squares(values):
    s = 0.0
    c = 0.0
    for x in values:
        v = x * x
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
    return s + c


LUT_BINS = 4096


@njit(cache=True)
def build_search_base(thresholds, grid_lo, step, eps, base):
    """Per (book, grid bin): count of thresholds below the bin start.

    Bin starts are nudged down by ``eps`` so a scalar hashing into a bin can
    never sit below the recorded start; the per-scalar threshold walk then
    corrects any undercount exactly.
    """
    nc, m = thresholds.shape
    bins = base.shape[1]
    for i in range(nc):
        ti = 0
        for j in range(bins):
            start = grid_lo + j * step - eps
            while ti < m and thresholds[i, ti] < start:
                ti += 1
            base[i, j] = ti


@njit(inline="always")
def _nearest_idx(x, i, thresholds, base, grid_lo, inv_step, m, bins):
    j = int((x - grid_lo) * inv_step)
    if j < 0:
        j = 0
    elif j >= bins:
        j = bins - 1
    idx = base[i, j]
    while idx < m and thresholds[i, idx] < x:
        idx += 1
    return idx


@njit(cache=True)
def nearest_level_sse(blocks, books, thresholds, base, grid_lo, inv_step,
                      hint, assign_out, sse_out):
    """Per-block argmin over codebooks of the nearest-level SSE.

    A scalar exactly on a level midpoint maps to the lower level, and SSE
    ties across books keep the lowest book index.  ``hint`` gives a starting
    book per block (typically last iteration's assignment) whose fully
    computed SSE prunes the others: a book is abandoned once its partial sum
    strictly exceeds the best, which can never discard a true minimum or tie.
    """
    n, w = blocks.shape
    nc, k = books.shape
    m = k - 1
    bins = base.shape[1]
    for b in range(n):
        p0 = hint[b]
        s = 0.0
        for l in range(w):
            x = blocks[b, l]
            idx = _nearest_idx(x, p0, thresholds, base, grid_lo, inv_step, m, bins)
            d = x - books[p0, idx]
            s += d * d
        best_i = p0
        best_s = s
        for i in range(nc):
            if i == p0:
                continue
            s = 0.0
            complete = True
            for l in range(w):
                x = blocks[b, l]
                idx = _nearest_idx(x, i, thresholds, base, grid_lo, inv_step, m, bins)
                d = x - books[i, idx]
                s += d * d
                if s > best_s:
                    complete = False
                    break
            if complete and (s < best_s or (s == best_s and i < best_i)):
                best_s = s
                best_i = i
        assign_out[b] = best_i
        sse_out[b] = best_s


@njit(cache=True)
def assigned_sse(blocks, books, thresholds, base, grid_lo, inv_step,
                 assignments, sse_out):
    """Per-block nearest-level SSE under a fixed block-to-book assignment."""
    n, w = blocks.shape
    k = books.shape[1]
    m = k - 1
    bins = base.shape[1]
    for b in range(n):
        i = assignments[b]
        s = 0.0
        for l in range(w):
            x = blocks[b, l]
            idx = _nearest_idx(x, i, thresholds, base, grid_lo, inv_step, m, bins)
            d = x - books[i, idx]
            s += d * d
        sse_out[b] = s


@njit(cache=True)
def sum_sq_diff(a, b):
    s = 0.0
    c = 0.0
    for i in range(len(a)):
        d = a[i] - b[i]
        v = d * d
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
    return s + c
