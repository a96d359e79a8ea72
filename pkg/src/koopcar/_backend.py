"""Kernel backend selection: numba-jitted by default, pure numpy on request.

Set KOOPCAR_NO_NUMBA=1 (or true/yes/on) before import to skip JIT compilation
and run every kernel as the plain Python/numpy function. The two paths execute
the same source, so results agree to floating-point noise.
"""

import os

_FLAG = os.environ.get("KOOPCAR_NO_NUMBA", "").strip().lower()
_DISABLED = _FLAG in {"1", "true", "yes", "on"}

if not _DISABLED:
    try:
        from numba import njit as _njit

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False


def kernel(func):
    """Decorator: njit(cache=True) when numba is active, identity otherwise."""
    if NUMBA_ENABLED:
        return _njit(cache=True)(func)
    return func


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
