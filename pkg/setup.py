import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python fallback only
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("HFIRST_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "hfirst._engine",
                ["src/hfirst/_engine.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                language="c++",
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
