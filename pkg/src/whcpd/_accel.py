"""Backend selection for the loop kernels.

Set ``WHCPD_DISABLE_NUMBA=1`` in the environment before import to force the
pure-numpy implementations, even when numba is installed.
"""
import os

_FLAG = os.environ.get("WHCPD_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - depends on environment
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is available.

    Without numba the function is returned unchanged, so the numba kernels can
    still be called (slowly) by the equivalence tests.
    """
    if HAVE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
