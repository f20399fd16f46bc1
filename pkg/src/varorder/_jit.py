"""Numba switch for the hot kernels.

``VARORDER_JIT`` selects the execution path:

* ``0``  -- plain Python/numpy, no numba import at all
* ``1``  -- numba ``njit`` without an on-disk cache
* ``2``  -- numba ``njit`` with ``cache=True`` (default)
"""
import functools
import os

JIT_LEVEL = int(os.environ.get("VARORDER_JIT", "2"))
ENABLED = JIT_LEVEL > 0

if ENABLED:
    import numba


def jit(*args, **kwargs):
    """Decorate a kernel; usable bare (``@jit``) or with numba options."""
    if args and callable(args[0]):
        return jit(**kwargs)(args[0])

    def decorate(func):
        if not ENABLED:
            return func
        # numpy error model: 1/0 gives inf instead of raising, like the fallback
        opts = {"cache": JIT_LEVEL > 1, "nogil": True, "error_model": "numpy"}
        opts.update(kwargs)
        return numba.njit(**opts)(func)

    return decorate


@functools.lru_cache(maxsize=None)
def describe():
    return "numba" if ENABLED else "numpy"
