"""Backend selection for the compiled kernels.

Set ``DRDDL_NO_NUMBA=1`` before import to force the pure-numpy path.
"""

import os

_FLAG = os.environ.get("DRDDL_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG in {"1", "true", "yes", "on"}

try:
    import numba
    from numba import prange
    HAVE_NUMBA = True
    # the bundled TBB is too old for numba and only produces a warning
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]
except ImportError:  # pragma: no cover - numba is a hard dependency
    numba = None
    prange = range
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    Compiles regardless of ``DRDDL_NO_NUMBA`` so tests can compare both
    paths; the flag only controls which path the public API dispatches to.
    """
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
