import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# SMR_NO_OPENMP=1 builds the kernels single-threaded (e.g. for compilers without libgomp).
if os.environ.get("SMR_NO_OPENMP"):
    omp_compile, omp_link = [], []
else:
    omp_compile, omp_link = ["-fopenmp"], ["-fopenmp"]

ext = Extension(
    "smr._kernels",
    ["src/smr/_kernels.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3"] + omp_compile,
    extra_link_args=omp_link,
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(
    ext_modules=cythonize([ext], compiler_directives={"language_level": "3"}),
)
