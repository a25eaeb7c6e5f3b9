"""Build script for the optional compiled kernels.

The extension is optional: when Cython or a C compiler is missing the
package installs without it and ``tavlab.kernels`` falls back to numpy.
"""
import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"WARNING: compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"WARNING: failed to build {ext.name} ({exc}); using numpy fallback")


def extensions():
    if os.environ.get("TAVLAB_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    # TAVLAB_NATIVE=1 tunes for the build machine (wider vectors, same results)
    native = ["-march=native"] if os.environ.get("TAVLAB_NATIVE") else []
    ext = Extension(
        "tavlab._ckernels",
        ["src/tavlab/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # no -ffast-math and no fused multiply-add: every sum is evaluated
        # in source order so results do not depend on the target CPU
        extra_compile_args=["-O3", "-ffp-contract=off"] + native,
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
