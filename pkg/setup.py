import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# Set TASKNMT_NO_EXT=1 to skip the compiled kernels; the package falls back
# to the pure-numpy kernel lane at import time.
if cythonize is None or os.environ.get("TASKNMT_NO_EXT"):
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "tasknmt.kernels._speedups",
                ["src/tasknmt/kernels/_speedups.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
