"""Backend selection for the compiled kernels.

Set ``GAA_NUMBA=0`` before import to force the pure-numpy code paths.
"""

import os

_FLAG = os.environ.get("GAA_NUMBA", "1").strip().lower()

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "off", "no")


def njit(func=None, **kwargs):
    """``numba.njit`` when numba is importable, otherwise the identity decorator.

    The compiled object is always built (lazily) when numba exists, so both
    paths can be exercised from one process regardless of ``USE_NUMBA``.
    """
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)

    def wrap(f):
        if not HAVE_NUMBA:
            return f
        import numba

        return numba.njit(**opts)(f)

    if func is not None:
        return wrap(func)
    return wrap
