"""Optional numba acceleration with a pure-numpy fallback.

Set SPINSQUEEZE_NO_NUMBA=1 to force the fallback even when numba is
importable. Modules ask for `njit` here instead of importing numba directly,
so the two code paths stay byte-identical apart from compilation.
"""

import os

HAS_NUMBA = False

if os.environ.get("SPINSQUEEZE_NO_NUMBA", "0") != "1":
    try:
        from numba import njit as _numba_njit

        HAS_NUMBA = True
    except ImportError:
        pass


def njit(*args, **kwargs):
    """numba.njit when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return _numba_njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]

    def wrap(func):
        return func

    return wrap
