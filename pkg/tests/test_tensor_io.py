"""Container round trips, synthetic data determinism, block decomposition."""

import struct

import numpy as np
import pytest

import bcq
from bcq.errors import (
    BadMagic,
    DataError,
    EmptyTensor,
    NonFiniteInput,
    NotMultiple,
    ShapeMismatch,
    TruncatedPayload,
    ValidationError,
)
from bcq.tensor_io import MAGIC, TensorView, parse_dist


def test_save_load_round_trip_bit_exact(tmp_path):
    t = bcq.TensorView(data=np.array([1.5, -2.25, 0.0, -0.0], dtype=np.float32),
                       shape=(2, 2), name="t")
    path = tmp_path / "t.bcqt"
    bcq.save_tensor(t, path)
    back = bcq.load_tensor(path)
    assert back.shape == (2, 2)
    assert back.data.tobytes() == t.data.tobytes()


def test_load_simple_payload(tmp_path):
    t = bcq.TensorView(data=np.array([1, 2, 3, 4], dtype=np.float32), shape=(2, 2))
    path = tmp_path / "t.bcqt"
    bcq.save_tensor(t, path)
    assert list(bcq.load_tensor(path).data) == [1, 2, 3, 4]


def _container(shape, payload, magic=MAGIC, version=1, dtype=0):
    head = magic + struct.pack("<IBB", version, dtype, len(shape))
    head += b"".join(struct.pack("<Q", d) for d in shape)
    return head + payload


def test_load_bad_magic(tmp_path):
    p = tmp_path / "x.bcqt"
    p.write_bytes(_container((1,), b"\0\0\0\0", magic=b"NOPE"))
    with pytest.raises(BadMagic):
        bcq.load_tensor(p)


def test_load_truncated_payload(tmp_path):
    p = tmp_path / "x.bcqt"
    p.write_bytes(_container((2,), b"\0\0\0\0"))
    with pytest.raises(TruncatedPayload):
        bcq.load_tensor(p)


def test_load_trailing_bytes(tmp_path):
    p = tmp_path / "x.bcqt"
    p.write_bytes(_container((1,), b"\0\0\0\0\xff"))
    with pytest.raises(DataError):
        bcq.load_tensor(p)


def test_load_nan_payload(tmp_path):
    p = tmp_path / "x.bcqt"
    p.write_bytes(_container((1,), struct.pack("<f", float("nan"))))
    with pytest.raises(NonFiniteInput):
        bcq.load_tensor(p)


def test_load_empty_shape(tmp_path):
    p = tmp_path / "x.bcqt"
    p.write_bytes(_container((), b""))
    with pytest.raises(EmptyTensor):
        bcq.load_tensor(p)


def test_load_zero_dim(tmp_path):
    p = tmp_path / "x.bcqt"
    p.write_bytes(_container((0,), b""))
    with pytest.raises(EmptyTensor):
        bcq.load_tensor(p)


def test_load_unsupported_version_and_dtype(tmp_path):
    p = tmp_path / "x.bcqt"
    p.write_bytes(_container((1,), b"\0\0\0\0", version=9))
    with pytest.raises(DataError):
        bcq.load_tensor(p)
    p.write_bytes(_container((1,), b"\0\0\0\0", dtype=1))
    with pytest.raises(DataError):
        bcq.load_tensor(p)


def test_tensor_view_validation():
    with pytest.raises(ShapeMismatch):
        TensorView(data=np.zeros(4, dtype=np.float32), shape=(3,))
    with pytest.raises(EmptyTensor):
        TensorView(data=np.zeros(0, dtype=np.float32), shape=(0,))
    with pytest.raises(EmptyTensor):
        TensorView(data=np.zeros(0, dtype=np.float32), shape=())
    with pytest.raises(NonFiniteInput):
        TensorView(data=np.array([1.0, np.inf], dtype=np.float32), shape=(2,))


# --- synthetic data ---------------------------------------------------------

def test_synth_deterministic():
    a = bcq.synth_tensor("gaussian(0,1)", 8, seed=7)
    b = bcq.synth_tensor("gaussian(0,1)", 8, seed=7)
    assert a.data.tobytes() == b.data.tobytes()
    c = bcq.synth_tensor("gaussian(0,1)", 8, seed=8)
    assert a.data.tobytes() != c.data.tobytes()


def test_uniform_law_of_large_numbers():
    t = bcq.synth_tensor("uniform(0,1)", 10**5, seed=1)
    assert abs(float(t.data.mean()) - 0.5) < 0.01
    assert t.data.min() >= 0.0 and t.data.max() <= 1.0


def test_outlier_frac_zero_degenerates_to_gaussian():
    a = bcq.synth_tensor("gaussian-with-outliers(2,0,10)", 64, seed=3)
    b = bcq.synth_tensor("gaussian(0,2)", 64, seed=3)
    assert a.data.tobytes() == b.data.tobytes()


def test_outliers_scale_marked_samples():
    frac = 0.25
    a = bcq.synth_tensor(f"gaussian-with-outliers(1,{frac},10)", 4096, seed=3)
    b = bcq.synth_tensor("gaussian(0,1)", 4096, seed=3)
    ratio = a.data / np.where(b.data == 0, 1, b.data)
    n_out = int(np.sum(np.isclose(ratio, 10.0)))
    assert 0.15 * 4096 < n_out < 0.35 * 4096


@pytest.mark.parametrize("spec", [
    "gaussian(0,1)", "laplace(0,2)", "uniform(-1,3)",
    "gaussian-with-outliers(1,0.01,10)", "mixture()",
])
def test_parse_dist_round_trips(spec):
    d = parse_dist(spec)
    t = bcq.synth_tensor(d, 32, seed=0)
    assert t.size == 32


@pytest.mark.parametrize("bad", [
    "gauss(0,1)", "gaussian(0)", "uniform(3,1)", "gaussian(0,-1)",
    "laplace(0,0)", "gaussian-with-outliers(1,2,10)", "gaussian-with-outliers(1,0.1,0)",
])
def test_bad_dist_specs(bad):
    with pytest.raises(ValidationError):
        bcq.synth_tensor(bad, 8, seed=0)


def test_synth_rejects_nonpositive_count():
    with pytest.raises(ValidationError):
        bcq.synth_tensor("gaussian(0,1)", 0, seed=0)


# --- decomposition ----------------------------------------------------------

def test_decompose_arithmetic():
    t = bcq.synth_tensor("gaussian(0,1)", 128, seed=0)
    d = bcq.decompose(t, 8, 64)
    assert (d.num_blocks, d.num_arrays, d.pad) == (16, 2, 0)


def test_decompose_padding():
    t = bcq.synth_tensor("gaussian(0,1)", 100, seed=0)
    d = bcq.decompose(t, 8, 64)
    assert d.pad == 28
    assert d.values.size == 128
    assert np.all(d.values[100:] == 0.0)
    assert d.num_full_blocks == 12


def test_decompose_not_multiple():
    t = bcq.synth_tensor("gaussian(0,1)", 128, seed=0)
    with pytest.raises(NotMultiple):
        bcq.decompose(t, 8, 12)
    with pytest.raises(ValidationError):
        bcq.decompose(t, 0, 0)


def test_decompose_covers_every_scalar_once():
    t = bcq.synth_tensor("laplace(0,1)", 203, seed=2)
    d = bcq.decompose(t, 4, 16)
    rebuilt = d.blocks().reshape(-1)[: t.size]
    assert np.array_equal(rebuilt, t.data.astype(np.float64))
