import os

import numpy as np
from setuptools import Extension, setup

PYX = "src/blindrx/_kernels/_fast.pyx"

ext_modules = []
if os.path.exists(PYX):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "blindrx._kernels._fast",
                    [PYX],
                    include_dirs=[np.get_include()],
                    # built from source on the target machine, so tuning for
                    # the local CPU is safe; the extension is optional anyway
                    extra_compile_args=["-O3", "-march=native"],
                    optional=True,
                )
            ],
            language_level=3,
        )
    except ImportError:
        # no Cython: the pure-numpy kernel backend is used instead
        pass

setup(ext_modules=ext_modules)
