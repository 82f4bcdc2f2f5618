"""Build script: compiles the optional quadrature hot-loop extension.

The package works without the extension (a NumPy fallback is selected at
import time); the build therefore tolerates a missing C toolchain.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/amap/_quadcore.pyx"],
        compiler_directives={"language_level": "3"},
    )
    include_dirs = [numpy.get_include()]
    for ext in ext_modules:
        ext.include_dirs = include_dirs
except Exception as exc:  # pragma: no cover - toolchain-dependent
    print(f"amap: skipping compiled extension ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
