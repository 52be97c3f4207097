"""Build script for the optional compiled NUTS kernel.

The extension is optional: when Cython or a C compiler is unavailable the
package installs without it and falls back to the pure-Python sampler.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("LAPLACE_AUDIT_NO_EXT", "") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "laplace_audit._nuts_ext",
                    ["src/laplace_audit/_nuts_ext.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
