"""Number formats: enumeration against a from-scratch oracle, rounding rules."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import bcq
from bcq.errors import ValidationError
from bcq.formats import FpFormat, IntFormat, e8m0_exponent, magnitudes, parse_format


def oracle_fp_values(exp_bits, man_bits):
    """Enumerate every finite value straight from the bit-field definition."""
    bias = 2 ** (exp_bits - 1) - 1
    out = set()
    for sign in (1.0, -1.0):
        for e in range(2**exp_bits):
            for m in range(2**man_bits):
                if exp_bits >= 3 and e == 2**exp_bits - 1 and m == 2**man_bits - 1:
                    continue  # NaN codepoint
                if e == 0:
                    val = m / 2.0**man_bits * 2.0 ** (1 - bias)
                else:
                    val = (1 + m / 2.0**man_bits) * 2.0 ** (e - bias)
                out.add(sign * val)
    return sorted(out)


@pytest.mark.parametrize("eb,mb", [(1, 2), (2, 1), (3, 0), (4, 3), (2, 3), (3, 2), (5, 2)])
def test_enumeration_matches_oracle(eb, mb):
    got = bcq.enumerate_codewords(FpFormat(eb, mb))
    assert list(got) == oracle_fp_values(eb, mb)


def test_e2m1_exact_set():
    expect = [-6, -4, -3, -2, -1.5, -1, -0.5, 0, 0.5, 1, 1.5, 2, 3, 4, 6]
    assert list(bcq.enumerate_codewords(parse_format("e2m1"))) == expect


def test_e1m2_count_and_max():
    values = bcq.enumerate_codewords(parse_format("e1m2"))
    assert len(values) == 15
    assert bcq.max_level(parse_format("e1m2")) == 3.5


def test_e3m0_powers_of_two():
    expect = [-8, -4, -2, -1, -0.5, -0.25, 0, 0.25, 0.5, 1, 2, 4, 8]
    assert list(bcq.enumerate_codewords(parse_format("e3m0"))) == expect


def test_max_levels():
    assert bcq.max_level(parse_format("int4")) == 7
    assert bcq.max_level(parse_format("e4m3")) == 448
    assert bcq.max_level(parse_format("e2m1")) == 6


def test_int_format_symmetric():
    got = bcq.enumerate_codewords(IntFormat(4))
    assert list(got) == list(range(-7, 8))


@pytest.mark.parametrize("name,fmt", [
    ("int4", IntFormat(4)),
    ("E2M1", FpFormat(2, 1)),
    ("e4m3", FpFormat(4, 3)),
    ("e8m0", FpFormat(8, 0)),
])
def test_parse_format(name, fmt):
    assert parse_format(name) == fmt


@pytest.mark.parametrize("bad", ["", "float16", "e2", "m1", "int1"])
def test_parse_format_rejects(bad):
    with pytest.raises(ValidationError):
        parse_format(bad)


def test_compute_scale_examples():
    e2m1 = parse_format("e2m1")
    assert bcq.compute_scale([12.0, -3.0], e2m1) == 2.0
    assert bcq.compute_scale([0.0, 0.0], e2m1) == 1.0
    assert bcq.compute_scale([7.0, -1.0], parse_format("int4")) == 1.0


def test_quantize_rtn_tie_prefers_even_mantissa():
    e2m1 = parse_format("e2m1")
    assert bcq.quantize_rtn(2.5, e2m1) == 2.0   # tie 2 vs 3
    assert bcq.quantize_rtn(-2.5, e2m1) == -2.0
    assert bcq.quantize_rtn(5.0, e2m1) == 4.0   # tie 4 vs 6, even grid position


def test_quantize_rtn_clamps_and_zero():
    e2m1 = parse_format("e2m1")
    assert bcq.quantize_rtn(100.0, e2m1) == 6.0
    assert bcq.quantize_rtn(-100.0, e2m1) == -6.0
    assert bcq.quantize_rtn(0.0, e2m1) == 0.0
    assert bcq.quantize_rtn(0.0, e2m1, 3.7) == 0.0


def test_quantize_rtn_integer_grid_half_even():
    int4 = parse_format("int4")
    assert bcq.quantize_rtn(0.5, int4) == 0.0
    assert bcq.quantize_rtn(1.5, int4) == 2.0
    assert bcq.quantize_rtn(2.5, int4) == 2.0


def test_quantize_rtn_rejects_bad_scale():
    with pytest.raises(ValidationError):
        bcq.quantize_rtn(1.0, parse_format("e2m1"), 0.0)
    with pytest.raises(ValidationError):
        bcq.quantize_rtn(1.0, parse_format("e2m1"), -2.0)


_FMTS = [parse_format(n) for n in ("e2m1", "e1m2", "e3m0", "e4m3", "int4")]


@settings(max_examples=300, deadline=None)
@given(
    x=st.floats(-1e4, 1e4, allow_nan=False),
    fi=st.integers(0, len(_FMTS) - 1),
    scale=st.floats(1e-3, 1e3),
)
def test_quantize_rtn_properties(x, fi, scale):
    fmt = _FMTS[fi]
    grid = bcq.enumerate_codewords(fmt) * scale
    q = bcq.quantize_rtn(x, fmt, scale)
    # membership in the scaled grid
    assert np.any(grid == q)
    # nearest codeword
    assert abs(x - q) <= np.min(np.abs(x - grid))
    # idempotence and symmetry
    assert bcq.quantize_rtn(q, fmt, scale) == q
    assert bcq.quantize_rtn(-x, fmt, scale) == -q


def test_quantize_rtn_fuzz_nearest_vectorized():
    rng = np.random.default_rng(11)
    for fmt in _FMTS:
        x = rng.normal(scale=5.0, size=10_000)
        scale = 0.37
        q = bcq.quantize_rtn(x, fmt, scale)
        grid = bcq.enumerate_codewords(fmt) * scale
        dmin = np.min(np.abs(x[:, None] - grid[None, :]), axis=1)
        assert np.all(np.abs(x - q) <= dmin)


def test_quantize_e8m0_examples():
    assert bcq.quantize_e8m0(3.0) == 4.0
    assert bcq.quantize_e8m0(2.0) == 2.0
    assert bcq.quantize_e8m0(1.4) == 1.0
    assert e8m0_exponent(3.0) == 2


def test_quantize_e8m0_log_domain_oracle():
    rng = np.random.default_rng(5)
    for s in np.exp(rng.uniform(-20, 20, size=500)):
        q = bcq.quantize_e8m0(float(s))
        e = np.log2(q)
        assert e == np.round(e)
        # nearest exponent in the log domain, halves toward +inf
        lg = np.log2(s)
        assert abs(lg - e) <= 0.5 + 1e-12


def test_quantize_e8m0_rejects_nonpositive():
    with pytest.raises(ValidationError):
        bcq.quantize_e8m0(0.0)
    with pytest.raises(ValidationError):
        bcq.quantize_e8m0(-1.0)


def test_magnitudes_sorted_and_start_at_zero():
    for fmt in _FMTS:
        mags = magnitudes(fmt)
        assert mags[0] == 0.0
        assert np.all(np.diff(mags) > 0)
