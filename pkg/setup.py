"""Build script: compiles the Cython MMA kernels when possible.

The package works without the extension (a NumPy fallback is selected at
import time), so any build failure here downgrades to a pure-Python install
instead of aborting.
"""

import numpy as np
from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "mixprec._mma_cy",
                ["src/mixprec/_mma_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fopenmp", "-fno-math-errno", "-march=native"],
                extra_link_args=["-fopenmp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"warning: Cython extension disabled ({exc}); using NumPy fallback")
    extensions = []

setup(ext_modules=extensions)
