"""Build script for the optional compiled kernel core.

The package is fully functional without the extension: lidarfield.kernels
falls back to pure-numpy implementations when `lidarfield.kernels._core`
is not importable.  Compilation failures are therefore non-fatal.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "lidarfield.kernels._core",
                ["src/lidarfield/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
