import os

from setuptools import setup

ext_modules = []
if os.environ.get("BRANCHTOPO_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension(
                "branchtopo._ckernels",
                ["src/branchtopo/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )],
            compiler_directives={"language_level": 3},
        )

setup(ext_modules=ext_modules)
