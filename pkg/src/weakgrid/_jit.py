"""JIT toggle: numba-compiled kernels with a pure-numpy fallback.

Hot kernels are decorated with :func:`njit` from this module.  Setting the
environment variable ``WEAKGRID_NUMBA=0`` before import turns the decorator
into a no-op, so the same source runs under the plain Python interpreter
(useful for debugging and as a dependency fallback).
"""
from __future__ import annotations

import os

NUMBA_ENABLED = os.environ.get("WEAKGRID_NUMBA", "1").lower() not in ("0", "false", "off")

if NUMBA_ENABLED:
    try:
        from numba import njit  # noqa: F401
    except ImportError:  # pragma: no cover - numba is a hard dependency by default
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(func=None, **kwargs):
        if func is not None:
            return func

        def wrapper(f):
            return f

        return wrapper
