"""Build script: compiles the kernel extension when a toolchain is available.

The extension is an accelerator, not a requirement; any build failure falls
back to the pure-Python kernels selected at import time.
"""

import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Treat extension build failures as a soft downgrade to pure Python."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing entirely
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            f"warning: building the kdlab kernel extension failed ({exc}); "
            "falling back to the pure-Python kernels",
            file=sys.stderr,
        )


ext_modules = []
if os.environ.get("KDLAB_PURE_PYTHON") != "1":
    try:
        from Cython.Build import cythonize

        # -ffp-contract=off keeps C arithmetic bitwise-equal to the
        # pure-Python kernels (no FMA contraction).
        ext_modules = cythonize(
            [
                Extension(
                    "kdlab._kernels.ckernels",
                    ["src/kdlab/_kernels/ckernels.pyx"],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        print(
            "warning: Cython unavailable; installing kdlab with pure-Python kernels",
            file=sys.stderr,
        )

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
