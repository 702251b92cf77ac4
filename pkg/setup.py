"""Build the Cython kernels.

Project metadata lives in pyproject.toml. The extension is optional: when it
cannot be built the package falls back to the numpy kernels at import time.
"""

import numpy
from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "fedbandit._kernels",
                ["src/fedbandit/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
