"""Hot Monte Carlo kernels with a compiled backend and a NumPy fallback.

The compiled module is used when it was built and ``TILTMINIMAX_PURE_PYTHON``
is not set to ``1``.
"""

from __future__ import annotations

import os

from . import _fallback

try:
    if os.environ.get("TILTMINIMAX_PURE_PYTHON") == "1":
        raise ImportError("pure-Python backend requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "python"

row_medians = _impl.row_medians
tilted_stats = _impl.tilted_stats
tilted_values = _fallback.tilted_values

__all__ = ["BACKEND", "row_medians", "tilted_stats", "tilted_values"]
