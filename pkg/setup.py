"""Build script for the optional compiled kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time), so a missing compiler must not break installation.  Set
MCAS_REQUIRE_EXT=1 to turn a failed extension build into a hard error.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


def _extensions():
    if os.environ.get("MCAS_SKIP_EXT") == "1":
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        if os.environ.get("MCAS_REQUIRE_EXT") == "1":
            raise
        return []
    ext = Extension(
        name="mcas._core_c",
        sources=["src/mcas/_core_c.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "nonecheck": False,
            "language_level": "3",
        },
    )


class optional_build_ext(build_ext):
    """Compile the kernels if possible, fall back to pure Python if not."""

    def run(self):
        try:
            super().run()
        except Exception:
            if os.environ.get("MCAS_REQUIRE_EXT") == "1":
                raise
            print("warning: compiled kernels unavailable, using the NumPy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception:
            if os.environ.get("MCAS_REQUIRE_EXT") == "1":
                raise
            print(f"warning: failed to build {ext.name}, using the NumPy fallback")


setup(ext_modules=_extensions(), cmdclass={"build_ext": optional_build_ext})
