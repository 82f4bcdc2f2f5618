"""Selects the quadrature hot-loop backend at import time.

Prefers the compiled Cython extension, falls back to the NumPy
implementation. ``AMAP_PURE_PYTHON=1`` forces the fallback (used by the
backend-equivalence tests and the benchmark).
"""

from __future__ import annotations

import os

if os.environ.get("AMAP_PURE_PYTHON", "") not in ("", "0"):
    from . import _quadcore_py as _impl
else:
    try:
        from . import _quadcore as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _quadcore_py as _impl

BACKEND_NAME: str = _impl.BACKEND_NAME
cross_gram = _impl.cross_gram
pair_cross = _impl.pair_cross

_FAMILY_CODES = {
    "squared_exponential": 0,
    "matern32": 1,
    "matern52": 2,
}


def family_code(family) -> int:
    return _FAMILY_CODES[getattr(family, "value", family)]
