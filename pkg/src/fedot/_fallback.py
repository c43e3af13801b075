"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and return conventions. Reductions go through BLAS, so the
summation order is whatever the BLAS build picks; results agree with the
compiled kernels to a few ulps, not bit for bit.
"""
import numpy as np

NAME = "numpy"


def gemm_rows(K, X):
    if X.shape[0] != K.shape[1]:
        raise ValueError(
            f"shape mismatch: K is {K.shape[0]}x{K.shape[1]}, X has {X.shape[0]} rows"
        )
    return K @ X


def gemm_cols(K, X):
    if X.shape[0] != K.shape[0]:
        raise ValueError(
            f"shape mismatch: K is {K.shape[0]}x{K.shape[1]}, X has {X.shape[0]} rows"
        )
    return K.T @ X


def ratio(marg, den, floor):
    if marg.shape != den.shape:
        raise ValueError("marginal and denominator shapes differ")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = marg / den
    bad = ~(den > floor)
    idx = int(np.flatnonzero(bad)[0]) if bad.any() else -1
    return out, idx


def residual(s, q, marg):
    d = s * q - marg
    return np.abs(d).sum(axis=0), d.sum(axis=0)
