"""Builds the compiled simulation kernel.

The package works without the extension (a numpy fallback is selected at
import time); building it makes synthetic-session generation much faster:

    pip install -e . --no-build-isolation
or
    python setup.py build_ext --inplace
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "neuroflow._simcore",
        ["src/neuroflow/_simcore.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions, compiler_directives={"language_level": "3"}
    )
)
