"""Backend selection for the compiled kernels.

Numba is used when importable unless ``JUMPFIELD_DISABLE_NUMBA`` is set to a
truthy value, in which case every kernel runs through its pure-numpy twin.
Both paths produce bit-identical results.
"""
from __future__ import annotations

import os

DISABLE_ENV = "JUMPFIELD_DISABLE_NUMBA"


def _env_disabled() -> bool:
    return os.environ.get(DISABLE_ENV, "").strip().lower() not in ("", "0", "false", "no")


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not _env_disabled()


def njit(func):
    """Compile ``func`` in nopython mode (GIL released) when numba is usable."""
    if _numba is None:
        return func
    return _numba.njit(cache=False, nogil=True)(func)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def set_threads(k: int | None) -> int:
    """Cap numba's thread pool; returns the count actually in effect.

    Kernels here are sequential per call so the cap only bounds resource use;
    results never depend on it.
    """
    if _numba is None or k is None:
        return 1 if k is None else max(1, int(k))
    limit = _numba.config.NUMBA_NUM_THREADS
    k = max(1, min(int(k), limit))
    _numba.set_num_threads(k)
    return k
