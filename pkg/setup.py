import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

compile_args = ["-O3", "-ffast-math", "-march=native", "-fopenmp"]
link_args = ["-fopenmp", "-lmvec", "-lm"]
if os.environ.get("DLSN_SMC_NO_OPENMP"):
    compile_args, link_args = ["-O3"], []

ext_modules = [
    Extension(
        "dlsn_smc.kernels._ckernels",
        ["src/dlsn_smc/kernels/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=compile_args,
        extra_link_args=link_args,
    )
]

setup(
    ext_modules=cythonize(
        ext_modules,
        compiler_directives={"language_level": "3"},
    ),
)
