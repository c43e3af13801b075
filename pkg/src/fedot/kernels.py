"""Kernel backend selection.

The compiled module is used when it imports; otherwise the numpy fallback.
Set ``FEDOT_KERNELS=numpy`` to force the fallback, or ``FEDOT_KERNELS=cython``
to make a missing extension an import error.
"""
import importlib
import logging
import os

logger = logging.getLogger(__name__)

BACKENDS = ("cython", "numpy")


def load(name):
    """Return the kernel module for ``name`` ('cython' or 'numpy')."""
    if name == "cython":
        return importlib.import_module("fedot._kernels")
    if name == "numpy":
        return importlib.import_module("fedot._fallback")
    raise ValueError(f"unknown kernel backend {name!r}; expected one of {BACKENDS}")


def _select():
    requested = os.environ.get("FEDOT_KERNELS", "auto").lower()
    if requested != "auto":
        return load(requested)
    try:
        return load("cython")
    except ImportError:
        logger.debug("compiled kernels unavailable, using numpy fallback")
        return load("numpy")


_impl = _select()

NAME = _impl.NAME
gemm_rows = _impl.gemm_rows
gemm_cols = _impl.gemm_cols
ratio = _impl.ratio
residual = _impl.residual
