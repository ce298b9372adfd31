"""Builds the optional compiled coordinate-sweep kernel.

The package is fully functional without it; esteq.kernels falls back to the
pure-Python implementation when the extension is missing.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/esteq/_kernels_cy.pyx",
        compiler_directives={"language_level": "3"},
    )
    for ext in ext_modules:
        # keep float ops bit-comparable with the Python backend
        ext.extra_compile_args = ["-O3", "-ffp-contract=off"]
except ImportError:
    pass

setup(ext_modules=ext_modules)
