"""Optional numba acceleration.

Hot kernels are written once in a numba-compatible subset of Python and
decorated with :func:`njit`.  Setting ``FLOWSPLIT_DISABLE_NUMBA=1`` in the
environment (before import) leaves them as plain Python/numpy functions,
which is handy for debugging and for benchmarking the two paths.
"""
import os

_DISABLED = os.environ.get("FLOWSPLIT_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba as _numba
except ImportError:  # pragma: no cover - exercised via env flag
    _numba = None

USING_NUMBA = _numba is not None


def njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, identity otherwise."""
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)
