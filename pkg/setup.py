import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension("expflow._kernels", ["src/expflow/_kernels.pyx"], include_dirs=[np.get_include()])

setup(ext_modules=cythonize([ext], compiler_directives={"language_level": "3"}))
