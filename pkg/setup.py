"""Build script: compiles the kernel extension when Cython is available.

The extension is optional; the package falls back to the numpy kernel
backend when the build is skipped or fails (see
hanvqa.diffcore.kernels).
"""

import sys

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/hanvqa/diffcore/kernels/_speedups.pyx",
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    print("Cython not available; building without the compiled kernel backend",
          file=sys.stderr)

setup(ext_modules=ext_modules)
