"""Numba switch.

Hot kernels are compiled with numba when it is importable and the
``TURNGRAB_NUMBA`` environment variable is not ``0``; otherwise the pure
numpy implementations are used. Both paths are always importable so they can
be compared side by side.
"""

import os

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def decorator(func):
            return func

        return decorator


def numba_enabled():
    flag = os.environ.get("TURNGRAB_NUMBA", "1").strip().lower()
    return NUMBA_AVAILABLE and flag not in ("0", "false", "no", "off")


USE_NUMBA = numba_enabled()
