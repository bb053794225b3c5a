"""Build script. The compiled kernel extension is optional: when Cython or a
C compiler is unavailable the package installs anyway and falls back to the
pure numpy kernels at import time. Set RELEX_SKIP_NATIVE=1 to force a
pure-Python install."""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("RELEX_SKIP_NATIVE"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            ["src/relex/kernels/_native.pyx"],
            compiler_directives={"language_level": "3"},
        )
        for ext in ext_modules:
            ext.include_dirs.append(numpy.get_include())
            # -ffast-math lets gcc vectorize the exp/tanh loops via libmvec;
            # each backend stays individually deterministic
            ext.extra_compile_args += ["-O3", "-ffast-math", "-march=native"]
            ext.extra_link_args += ["-lmvec", "-lm"]
            # a failed compile degrades to the pure backend instead of
            # failing the install
            ext.optional = True
    except ImportError:
        pass

setup(ext_modules=ext_modules)
