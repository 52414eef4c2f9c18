import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "lorentz_carleman._leapfrog",
    ["src/lorentz_carleman/_leapfrog.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3"],
)

setup(ext_modules=cythonize(ext, compiler_directives={"language_level": "3"}))
