import os

import numpy as np
from setuptools import Extension, setup

# The compiled core is optional: without Cython (or with PAMCAT_NO_EXT=1)
# the package installs with the pure-Python kernels only.
ext_modules = []
if not os.environ.get("PAMCAT_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "pamcat._core",
                    ["src/pamcat/_core.pyx"],
                    include_dirs=[np.get_include()],
                    # no -ffast-math / fp-contract: the stochastic kernels must
                    # reproduce the Python fallback bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
