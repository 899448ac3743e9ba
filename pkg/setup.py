"""Builds the optional compiled kernel extension.

The package works without the extension (pure NumPy fallbacks are selected at
import time), so the extension is marked optional: a missing compiler degrades
to the fallback instead of failing the install.
"""
from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "lidar4d._kernels._native",
                ["src/lidar4d/_kernels/_native.pyx"],
            )
        ],
        language_level=3,
    )
    for ext in ext_modules:
        ext.optional = True
except ImportError:
    pass

setup(ext_modules=ext_modules)
