"""Build the optional compiled core.

The extension is optional: if Cython or a C compiler is missing the package
installs without it and falls back to the numpy implementation at import.
"""
import os
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled core not built ({exc}); using numpy fallback", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc})", file=sys.stderr)


def extensions():
    if os.environ.get("NLFRAG_NO_EXTENSION"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    # no -ffast-math: the accumulation kernels rely on compensated summation
    flags = ["-O3", "-ffp-contract=off", "-fopenmp"]
    ext = Extension(
        "nlfrag._core",
        ["src/nlfrag/_core.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=flags,
        extra_link_args=["-fopenmp"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
