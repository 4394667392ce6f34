"""Numba shim: jitted kernels by default, pure-numpy fallback on request.

Set PREINDEX_NO_NUMBA=1 to force the numpy code paths (also used when numba
is not importable). The flag is read once at import time.
"""

import os

_disabled = os.environ.get("PREINDEX_NO_NUMBA", "").strip() not in ("", "0")

if _disabled:
    NUMBA_ENABLED = False
else:
    try:
        from numba import njit  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):  # noqa: F811
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap
