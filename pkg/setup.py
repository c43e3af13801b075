"""Build the optional Cython kernel module.

The package works without it: ``fedot.kernels`` falls back to numpy when
``fedot._kernels`` cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("FEDOT_NO_EXTENSION") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "fedot._kernels",
                    ["src/fedot/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no -ffast-math: summation order must stay fixed
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
