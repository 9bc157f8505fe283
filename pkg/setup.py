import os

from setuptools import Extension, setup

# The compiled kernel module is optional: the package falls back to the pure
# NumPy implementation at import time when lamcmc._core is absent.
ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    npyrandom_dir = os.path.join(os.path.dirname(np.__file__), "random", "lib")
    ext = Extension(
        "lamcmc._core",
        ["src/lamcmc/_core.pyx"],
        include_dirs=[np.get_include()],
        library_dirs=[npyrandom_dir],
        libraries=["npyrandom"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"warning: building without compiled core ({exc})")

setup(ext_modules=ext_modules)
