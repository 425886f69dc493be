"""Build hook for the optional compiled stepping kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed, not functionality.
"""

import numpy
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize

    # -ffast-math is deliberately avoided: reductions must be reproducible
    # bit-for-bit across runs for the determinism guarantees.
    extensions = cythonize(
        [
            Extension(
                "spdelab._kernels._core",
                ["src/spdelab/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception:
    extensions = []

setup(ext_modules=extensions)
