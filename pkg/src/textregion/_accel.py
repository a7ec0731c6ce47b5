"""Backend selection for the hot numeric kernels.

The package ships two implementations of every hot kernel: a numba
``@njit`` version and a pure-numpy fallback.  Which one the public
dispatchers use is decided once at import time:

* ``TEXTREGION_BACKEND=numba``  force the JIT kernels (error if numba
  is not importable)
* ``TEXTREGION_BACKEND=numpy``  force the pure-numpy fallback
* unset or ``auto``             numba when available, numpy otherwise

``benchmarks/bench_kernels.py`` calls both paths directly regardless of
the flag.
"""

import os

try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba_njit = None
    HAVE_NUMBA = False


def _select_backend() -> bool:
    requested = os.environ.get("TEXTREGION_BACKEND", "auto").strip().lower()
    if requested in ("", "auto"):
        return HAVE_NUMBA
    if requested == "numba":
        if not HAVE_NUMBA:
            raise ImportError(
                "TEXTREGION_BACKEND=numba requested but numba is not importable"
            )
        return True
    if requested == "numpy":
        return False
    raise ValueError(
        f"unknown TEXTREGION_BACKEND={requested!r}; expected numba, numpy or auto"
    )


USE_NUMBA = _select_backend()


def njit(func):
    """``@njit(cache=True, nogil=True)`` when numba is present, no-op otherwise."""
    if HAVE_NUMBA:
        return _numba_njit(cache=True, nogil=True)(func)
    return func
