"""Kernel selection: compiled extension when importable, numpy fallback otherwise.

Set ``OSPDE_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
tridiag_solve = _kernels_py.tridiag_solve
penalized_tridiag_solve = _kernels_py.penalized_tridiag_solve

if not os.environ.get("OSPDE_PURE_PYTHON"):
    try:
        from . import _kernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        tridiag_solve = _kernels.tridiag_solve
        penalized_tridiag_solve = _kernels.penalized_tridiag_solve
