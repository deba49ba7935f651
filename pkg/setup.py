"""Build script for the optional compiled kernel.

The package is pure Python plus one Cython extension (hypodens._kernels)
holding the hot Monte Carlo stepping loops.  The extension is optional: if
Cython or a C compiler is unavailable the install still succeeds and the
package falls back to the vectorized numpy kernels at import time.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "hypodens._kernels",
                ["src/hypodens/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_9_API_VERSION")],
                optional=True,
            )
        ],
        language_level="3",
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
