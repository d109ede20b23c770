"""Optional numba acceleration.

Set ``LANDMARK_DL_NUMBA=0`` to force the pure-numpy kernels even when numba
is importable. The flag is read once, at import time.
"""

import os

_FLAG = os.environ.get("LANDMARK_DL_NUMBA", "1").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is optional
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and _FLAG not in {"0", "false", "no", "off"}


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)

    def wrapper(f):
        return f

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrapper
