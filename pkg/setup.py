import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# Contraction into FMA would change rounding relative to the Python fallback.
compile_args = ["-O3", "-ffp-contract=off"] if os.name != "nt" else []

ext = Extension(
    "corrkal._kernels",
    ["src/corrkal/_kernels.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=compile_args,
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(
    ext_modules=cythonize(ext, language_level=3, compiler_directives={"boundscheck": False, "wraparound": False, "cdivision": True}),
)
