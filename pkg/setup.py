from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # numpy fallback is used at runtime
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("ostl._kernels", ["src/ostl/_kernels.pyx"],
                   extra_compile_args=["-O3", "-ffp-contract=off"])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
