"""Kernel dispatch: the compiled extension when it imports, numpy otherwise.

Set ``LEOPOS_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("LEOPOS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

gold_bits = _impl.gold_bits
sinc_interp = _impl.sinc_interp
mul_fold = _impl.mul_fold

__all__ = ["BACKEND", "gold_bits", "sinc_interp", "mul_fold"]
