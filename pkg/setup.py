"""Builds the optional Cython kernels; the package falls back to numpy without them."""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [Extension("mannprune._ckernels", ["src/mannprune/_ckernels.pyx"],
                   include_dirs=[np.get_include()],
                   define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                   extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as e:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({e}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as e:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({e}); using numpy fallback")


if os.environ.get("MANNPRUNE_NO_EXT"):
    extensions = []

setup(ext_modules=extensions, cmdclass={"build_ext": OptionalBuildExt})
