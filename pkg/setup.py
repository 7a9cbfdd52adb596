"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (lethe.backend falls
back to the numpy kernels), so the build degrades gracefully when Cython or
a C compiler is unavailable.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    numpy = None
    cythonize = None

ext_modules = []
if cythonize is not None and numpy is not None:
    ext_modules = cythonize(
        [
            Extension(
                "lethe._kernels",
                ["src/lethe/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
