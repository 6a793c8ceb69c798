import pytest

import bcq


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger numba compilation once so timed tests measure warm code."""
    t = bcq.synth_tensor("gaussian(0,1)", 1024, seed=0)
    cfg = bcq.QuantConfig(block_len=8, array_len=64, num_codebooks=2, bits=2,
                          seed=0, max_iters=2)
    bcq.calibrate_tensor(t, cfg)
