"""Optional numba acceleration.

Hot kernels are written twice: a numba ``@njit`` version and a pure-numpy
version. ``PEAKFORGE_NO_NUMBA=1`` (or a missing numba install) selects the
numpy path everywhere. Both paths produce identical results; the test-suite
checks this kernel by kernel.
"""

from __future__ import annotations

import os

_DISABLE = os.environ.get("PEAKFORGE_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLE:
        raise ImportError("disabled by PEAKFORGE_NO_NUMBA")
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:
    _numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA


def njit(fn=None, **kwargs):
    """``numba.njit(cache=True)`` when available, otherwise a no-op decorator.

    Without numba the function is returned unchanged and runs as plain Python.
    """
    kwargs.setdefault("cache", True)
    if fn is None:
        return lambda f: njit(f, **kwargs)
    if HAVE_NUMBA:
        return _numba.njit(**kwargs)(fn)
    return fn


def pick(numba_fn, numpy_fn):
    """Return the kernel implementation selected by the environment flag."""
    return numba_fn if USE_NUMBA else numpy_fn
