"""Kernel backend selection: compiled extension if available, numpy otherwise.

Set GRIDVERIFY_PURE_PYTHON=1 to force the numpy backend (the benchmark uses
this to compare the two).
"""

import os

from . import codes  # noqa: F401
from .pack import AdamParams, PackedProblem  # noqa: F401

if os.environ.get("GRIDVERIFY_PURE_PYTHON"):
    from . import kernel_py as backend
else:
    try:
        from . import _kernel as backend  # type: ignore[attr-defined]
    except ImportError:
        from . import kernel_py as backend

BACKEND_NAME = backend.NAME


def make_kernel(pp: PackedProblem):
    return backend.Kernel(pp)


def make_python_kernel(pp: PackedProblem):
    from . import kernel_py

    return kernel_py.Kernel(pp)
