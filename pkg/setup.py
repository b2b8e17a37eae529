import os

import numpy as np
from setuptools import Extension, setup

# NRF_NO_EXT=1 builds the pure-Python package only.
ext_modules = []
if not os.environ.get("NRF_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "nrf._kernels",
                ["src/nrf/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # fp-contract off keeps results bitwise equal to the numpy fallback
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
