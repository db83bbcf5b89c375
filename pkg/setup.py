import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SLIPCERT_NO_EXT") != "1":
    from Cython.Build import cythonize

    extensions = [
        Extension(
            "slipcert._core",
            ["src/slipcert/_core.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
        )
    ]
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
