import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedot import kernels
from fedot.core import FLOOR

IMPLS = []
for _name in kernels.BACKENDS:
    try:
        IMPLS.append(kernels.load(_name))
    except ImportError:
        pass


@pytest.fixture(params=IMPLS, ids=lambda m: m.NAME)
def impl(request):
    return request.param


def test_fallback_is_always_available():
    assert kernels.load("numpy").NAME == "numpy"


def test_backend_selection_by_environment():
    env = dict(os.environ, FEDOT_KERNELS="numpy")
    out = subprocess.run([sys.executable, "-c", "from fedot import kernels; print(kernels.NAME)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.load("fortran")


def test_gemm_matches_reference(impl):
    rng = np.random.default_rng(0)
    K = rng.random((7, 5))
    X = rng.random((5, 3))
    Y = rng.random((7, 3))
    np.testing.assert_allclose(impl.gemm_rows(K, X), K @ X, rtol=1e-14)
    np.testing.assert_allclose(impl.gemm_cols(K, Y), K.T @ Y, rtol=1e-14)
    with pytest.raises(ValueError):
        impl.gemm_rows(K, Y)


def test_ratio_and_residual(impl):
    marg = np.array([[1.0], [2.0]])
    out, bad = impl.ratio(marg, np.array([[2.0], [4.0]]), FLOOR)
    assert out.ravel().tolist() == [0.5, 0.5] and bad == -1
    _, bad = impl.ratio(marg, np.array([[2.0], [0.0]]), FLOOR)
    assert bad == 1
    l1, signed = impl.residual(np.array([[1.0], [1.0]]), np.array([[0.5], [2.5]]), np.array([[1.0], [2.0]]))
    assert l1.tolist() == [1.0] and signed.tolist() == [0.0]


@pytest.mark.skipif(len(IMPLS) < 2, reason="compiled kernels not built")
@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_backends_agree(r, c, N, seed):
    rng = np.random.default_rng(seed)
    K = rng.random((r, c))
    X = rng.random((c, N))
    Y = rng.random((r, N))
    a, b = IMPLS
    np.testing.assert_allclose(a.gemm_rows(K, X), b.gemm_rows(K, X), rtol=1e-13)
    np.testing.assert_allclose(a.gemm_cols(K, Y), b.gemm_cols(K, Y), rtol=1e-13)


@pytest.mark.skipif(not IMPLS or IMPLS[0].NAME != "cython", reason="compiled kernels not built")
def test_compiled_block_products_are_bit_exact():
    # row blocks of K @ v equal the corresponding slices of the full product
    rng = np.random.default_rng(5)
    K = rng.random((12, 12))
    v = rng.random((12, 2))
    full = IMPLS[0].gemm_rows(K, v)
    for j in range(3):
        blk = IMPLS[0].gemm_rows(np.ascontiguousarray(K[4 * j:4 * j + 4]), v)
        assert np.array_equal(blk, full[4 * j:4 * j + 4])
