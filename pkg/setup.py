import os

from setuptools import Extension, setup

# The compiled kernel core is optional: when Cython or a C compiler is
# unavailable the package installs pure and maskveil._kernels falls back to
# the NumPy implementation at import time.
ext_modules = []
if os.environ.get("MASKVEIL_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext = Extension(
            "maskveil._kernels._core",
            ["src/maskveil/_kernels/_core.pyx"],
            include_dirs=[numpy.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            # keep float expression evaluation identical to the NumPy fallback
            extra_compile_args=["-O2", "-ffp-contract=off"],
        )
        ext_modules = cythonize([ext], language_level="3")
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
