import glob

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

# Builds against the C++ sources in the repository checkout; install from
# this directory (pip install -e . --no-build-isolation).
ext = Pybind11Extension(
    "fedlight._core",
    sorted(glob.glob("../src/*.cpp")) + ["bindings.cpp"],
    include_dirs=["../include", "../vendor"],
    libraries=["sodium"],
    cxx_std=20,
    extra_compile_args=["-fno-fast-math"],
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext}, packages=["fedlight"])
