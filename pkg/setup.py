"""Build script: compiles the optional Cython convolution core.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only prints a warning.
"""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        print("docsr: Cython/numpy unavailable at build time; "
              "skipping compiled kernels", file=sys.stderr)
        return []
    from setuptools import Extension

    ext = Extension(
        "docsr.kernels._conv_cy",
        sources=["src/docsr/kernels/_conv_cy.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3", "-fopenmp"],
        extra_link_args=["-fopenmp"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


class optional_build_ext(build_ext):
    """Never let a kernel compile failure break the install."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"docsr: compiled kernels skipped ({exc}); "
                  "numpy fallback will be used", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"docsr: building {ext.name} failed ({exc}); "
                  "numpy fallback will be used", file=sys.stderr)


setup(
    ext_modules=_extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
