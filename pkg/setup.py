import numpy as np
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "cog3d._polyclip",
                ["src/cog3d/_polyclip.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Pure-Python fallback is selected at import time; the wheel still works.
    ext_modules = []

setup(ext_modules=ext_modules)
