"""JIT selection for the hot kernels.

Set ``ADATILE_DISABLE_NUMBA=1`` to force the pure-numpy paths even when
numba is importable.
"""

import os

_DISABLED = os.getenv("ADATILE_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by ADATILE_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def deco(fn):
            return fn

        return deco


NUMBA_OPTS = {"cache": True, "nogil": True}
