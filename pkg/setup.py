import sys

from setuptools import Extension, setup


def extension_modules():
    """Compiled recurrence kernels. The package falls back to the pure-NumPy
    kernels at import time if this extension is absent, so a missing Cython
    toolchain degrades the build instead of breaking it."""
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError as exc:
        print(f"skipping compiled kernels ({exc}); pure-NumPy fallback will be used",
              file=sys.stderr)
        return []
    extensions = [
        Extension(
            "pigrn.nn._recurrence_cy",
            ["src/pigrn/nn/_recurrence_cy.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"],
        )
    ]
    return cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )


setup(ext_modules=extension_modules())
