"""Scalar quantizer design, checked against exhaustive contiguous partitions."""

import itertools
import math

import numpy as np
import pytest

import bcq
from bcq.errors import ValidationError
from bcq.lloydmax import assign, lloyd_max, lloyd_max_best, polish


def optimal_partition_sse(data, k):
    """Exhaustive search over contiguous partitions of the sorted data."""
    xs = np.sort(np.asarray(data, dtype=np.float64))
    n = xs.size
    best = math.inf
    for r in range(min(k, n)):
        for splits in itertools.combinations(range(1, n), r):
            bounds = (0, *splits, n)
            tot = 0.0
            for i in range(len(bounds) - 1):
                seg = xs[bounds[i] : bounds[i + 1]]
                tot += float(((seg - seg.mean()) ** 2).sum())
            best = min(best, tot)
    return best


def test_symmetric_two_point_data():
    res = lloyd_max([-1, -1, 1, 1], bits=1)
    assert np.allclose(res.levels, [-1, 1])
    assert res.mse == 0.0


def test_one_two_three_four():
    res = lloyd_max([1, 2, 3, 4], bits=1)
    assert np.allclose(res.levels, [1.5, 3.5])
    assert abs(res.mse - 0.25) < 1e-12
    # cross-check against the exhaustive oracle
    assert abs(res.mse - optimal_partition_sse([1, 2, 3, 4], 2) / 4) < 1e-12


def test_constant_data():
    res = lloyd_max([3.25, 3.25, 3.25], bits=2)
    assert np.all(res.levels == 3.25)
    assert res.mse == 0.0


def test_enough_levels_reach_zero_mse():
    data = [0.5, 1.25, -3.0, 7.5]
    res = lloyd_max_best(data, bits=2, restarts=8, seed=0)
    assert res.mse < 1e-18


def test_mse_trace_monotone():
    rng = np.random.default_rng(0)
    for trial in range(20):
        data = rng.normal(size=200) * rng.choice([0.1, 1.0, 30.0])
        res = lloyd_max(data, bits=3, record_trace=True)
        for a, b in zip(res.mse_trace, res.mse_trace[1:]):
            assert b <= a * (1 + 1e-12)


def test_fixpoint_conditions():
    rng = np.random.default_rng(1)
    data = rng.normal(size=500)
    res = lloyd_max(data, bits=2, tol=1e-12)
    levels = res.levels
    thresholds = 0.5 * (levels[:-1] + levels[1:])
    idx, _ = assign(data, levels)
    for i in range(levels.size):
        region = data[idx == i]
        if region.size:
            assert abs(region.mean() - levels[i]) < 1e-6
    # thresholds are midpoints by construction of the assignment
    assert np.all(np.diff(thresholds) >= 0)


def test_beats_max_scaled_uniform_on_asymmetric_data():
    rng = np.random.default_rng(2)
    data = rng.exponential(scale=1.0, size=4000)  # strongly asymmetric
    bits = 3
    res = lloyd_max_best(data, bits=bits, restarts=4, seed=0)
    peak = np.abs(data).max()
    uniform_levels = np.linspace(-peak, peak, 2**bits)
    _, uniform_mse = assign(data, uniform_levels)
    assert res.mse <= uniform_mse


def test_oracle_equivalence_small():
    rng = np.random.default_rng(3)
    for trial in range(25):
        n = int(rng.integers(2, 11))
        data = rng.normal(size=n) * 5
        for bits in (1, 2):
            oracle = optimal_partition_sse(data, 2**bits) / n
            res = lloyd_max_best(data, bits=bits, restarts=8, seed=trial)
            assert res.mse <= oracle + 1e-9


def test_polish_never_hurts():
    rng = np.random.default_rng(4)
    data = rng.normal(size=64)
    base = lloyd_max(data, bits=2)
    refined = polish(data, 2, base)
    assert refined.mse <= base.mse


def test_assign_examples():
    idx, mse = assign([0.4], [0.0, 1.0])
    assert list(idx) == [0]
    assert abs(mse - 0.16) < 1e-15

    idx, _ = assign([0.5], [0.0, 1.0])
    assert list(idx) == [0]  # tie goes to the lower index

    _, mse = assign([1, 2, 3, 4], [1.5, 3.5])
    assert abs(mse - 0.25) < 1e-15


def test_assign_rejects_empty_levels():
    with pytest.raises(ValidationError):
        assign([1.0], [])


def test_errors():
    with pytest.raises(ValidationError):
        lloyd_max([1.0], bits=0)
    with pytest.raises(ValidationError):
        lloyd_max([], bits=1)
    with pytest.raises(ValidationError):
        lloyd_max([1.0, 2.0], bits=1, init=[0.0])  # wrong level count
    with pytest.raises(ValidationError):
        lloyd_max([1.0, 2.0], bits=1, init=[1.0, 0.0])  # unsorted


def test_init_is_respected():
    res = lloyd_max([1, 2, 3, 4], bits=1, init=np.array([1.0, 4.0]))
    assert np.allclose(res.levels, [1.5, 3.5])


def test_deterministic_across_runs():
    rng = np.random.default_rng(9)
    data = rng.normal(size=300)
    a = lloyd_max_best(data, bits=3, restarts=4, seed=5)
    b = lloyd_max_best(data, bits=3, restarts=4, seed=5)
    assert np.array_equal(a.levels, b.levels)
    assert a.mse == b.mse
