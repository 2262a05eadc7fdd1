from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; kernels fall back to NumPy
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "coordgate_lab._ckernels",
                ["src/coordgate_lab/_ckernels.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
