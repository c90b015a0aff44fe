"""Build script: compiles the optional hot-kernel extension.

The extension is optional by design -- if no compiler (or Cython) is around,
the install still succeeds and the package falls back to the pure-numpy
kernels at import time.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "lyapco._kernels",
                ["src/lyapco/_kernels.pyx"],
                # -ffp-contract=off keeps the compiled arithmetic bit-stable
                # against the pure-python mirror (no surprise FMA fusion).
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
    for ext in ext_modules:
        ext.optional = True
except ImportError:
    pass

setup(ext_modules=ext_modules)
