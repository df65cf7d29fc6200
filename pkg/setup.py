"""Builds the optional compiled EM kernel.

The package works without it: lcmcr._backend falls back to the pure
NumPy kernels when the extension is missing or fails to import.
"""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "lcmcr._kernels_cy",
        ["src/lcmcr/_kernels_cy.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
