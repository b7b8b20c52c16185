"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so a failed Cython build degrades to a warning
instead of aborting the install.
"""

import sys

from setuptools import setup


def make_extensions():
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError as exc:
        print(f"warning: Cython/numpy unavailable ({exc}); "
              "building without compiled kernels", file=sys.stderr)
        return []
    ext = Extension(
        "aphtherm._kernels._compiled",
        sources=["src/aphtherm/_kernels/_compiled.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


try:
    extensions = make_extensions()
except Exception as exc:  # degraded install is still a working install
    print(f"warning: kernel extension build failed ({exc}); "
          "falling back to pure-python kernels", file=sys.stderr)
    extensions = []

setup(ext_modules=extensions)
