import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # the package falls back to ctxdg._fallback
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("ctxdg._native", ["src/ctxdg/_native.pyx"],
                   include_dirs=[np.get_include()])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
