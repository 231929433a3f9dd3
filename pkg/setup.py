from setuptools import setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; tempus falls back to its reference loop
    ext_modules = []
else:
    ext_modules = cythonize(
        ["src/tempus/_kernel.pyx"],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
