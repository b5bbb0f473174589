"""Build script for the optional compiled Haar kernels.

The package is fully functional without the extension (a numpy fallback is
selected at import time); the extension only accelerates the per-step
wavelet analysis/synthesis inner loops.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "haarmae.wavelet._haar_ext",
                ["src/haarmae/wavelet/_haar_ext.pyx"],
                include_dirs=[numpy.get_include()],
                # -ffp-contract=off keeps the compiled kernels bit-identical
                # to the numpy fallback (no FMA reassociation).
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
