"""Build the optional compiled conv kernels.

If Cython or a C compiler is missing the package still installs and falls
back to the numpy kernels at import time.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("HYPERPRUNE_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "hyperprune.numeric._ckernels",
                    ["src/hyperprune/numeric/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
