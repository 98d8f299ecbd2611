"""Backend selection for the hot numerical kernels.

The compiled extension ``_ckernels`` is used when it imports cleanly; the
numpy implementation in ``_pykernels`` is the fallback.  Setting the
environment variable ``PLAN_CL_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

P_INF = _pykernels.P_INF

if os.environ.get("PLAN_CL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

gram_schmidt_rows = _impl.gram_schmidt_rows
jacobi_svd = _impl.jacobi_svd
ball_ascent = _impl.ball_ascent

__all__ = ["BACKEND", "P_INF", "ball_ascent", "gram_schmidt_rows", "jacobi_svd"]
