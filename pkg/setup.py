"""Build the optional compiled carving kernel.

The package works without it (a numpy fallback is selected at import);
building it is strongly recommended for full-resolution real-time use.
"""

import sys

from setuptools import Extension, setup


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        print("voxtrack: Cython/numpy unavailable at build time, "
              "skipping compiled kernels", file=sys.stderr)
        return []
    ext = Extension(
        "voxtrack._kernels",
        sources=["src/voxtrack/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-fopenmp"],
        extra_link_args=["-fopenmp"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    )


setup(ext_modules=extensions())
