"""JIT switch.

Set ``CAUSALREC_NUMBA=0`` to force the vectorised numpy kernels even when numba
is installed. The flag is read once, at import.
"""

from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("CAUSALREC_NUMBA", "1").strip().lower() not in {
    "0",
    "false",
    "no",
    "off",
}


def njit(fn):
    if not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    return numba.njit(cache=True, nogil=True)(fn)
