"""Two executions of the kernel source: compiled (``fast``) and plain (``ref``).

``fast`` is what the library uses.  ``ref`` runs the identical statements as
ordinary Python so that the operation-counting floats in
:mod:`mdnewton.expansion` can tally every hardware operation.
"""
import importlib.util
import sys
from pathlib import Path

_SOURCE = Path(__file__).with_name("_kernels.py")


def _load(name, jit):
    spec = importlib.util.spec_from_file_location(name, _SOURCE)
    module = importlib.util.module_from_spec(spec)
    module._JIT = jit
    sys.modules[name] = module
    spec.loader.exec_module(module)
    return module


fast = _load("mdnewton._kernels_fast", True)
ref = _load("mdnewton._kernels_ref", False)

#: how two_prod obtains the rounding error of a product
TWO_PROD_METHOD = "dekker"
