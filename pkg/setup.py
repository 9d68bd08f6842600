"""Build the optional compiled kernels.

The package works without them: ``slafnet.kernels`` falls back to numpy
implementations when the extension is missing.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("SLAFNET_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "slafnet.kernels._ckernels",
                    ["src/slafnet/kernels/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    language="c++",
                    extra_compile_args=["-O3", "-std=c++17"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
