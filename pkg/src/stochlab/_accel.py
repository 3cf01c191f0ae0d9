"""Kernel dispatch between numba-compiled loops and plain numpy code.

Set ``STOCHLAB_DISABLE_NUMBA=1`` to force the numpy implementations (useful
when numba is unavailable or when debugging a kernel).  Both variants of every
kernel stay importable so they can be compared directly.
"""
from __future__ import annotations

import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("STOCHLAB_DISABLE_NUMBA", "").strip().lower() in _FALSY


def njit(fn):
    """Compile ``fn`` with numba in nopython mode, or return it unchanged."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def select(compiled, fallback):
    return compiled if USE_NUMBA else fallback


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
