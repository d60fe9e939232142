"""Build script: compiles the optional native interpolation core.

The package works without the compiled extension (a numpy fallback is
selected at import time), so any failure here downgrades to a warning
instead of aborting the install.
"""

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = [
        Extension(
            "greenlab._native._spline3",
            ["src/greenlab/_native/_spline3.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})
except Exception as exc:  # pragma: no cover - build-environment dependent
    import warnings

    warnings.warn(f"native core not built ({exc}); pure-Python fallback will be used")
    ext_modules = []

setup(ext_modules=ext_modules)
