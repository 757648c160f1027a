"""Lattice kernel dispatch: the compiled extension when built, else the Python fallback.

Set ``SEGEN_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("SEGEN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

semimarkov_forward = _impl.semimarkov_forward
semimarkov_viterbi = _impl.semimarkov_viterbi

__all__ = ["BACKEND", "semimarkov_forward", "semimarkov_viterbi"]
