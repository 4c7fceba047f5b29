import os

import numpy as np
from setuptools import Extension, setup

# The interior-point kernel compiles to smpckit._ipm when Cython and a C
# compiler are available; otherwise the package falls back to the pure
# NumPy implementation in smpckit._ipm_py at import time.
try:
    if not os.path.exists("src/smpckit/_ipm.pyx"):
        raise ImportError
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "smpckit._ipm",
                ["src/smpckit/_ipm.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3", "boundscheck": False},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
