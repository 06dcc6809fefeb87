"""Kernel backend selection.

Hot numeric loops (Euler stepping, arrival scanning, first-hitting sweeps)
have two implementations: numba @njit kernels and pure-numpy fallbacks.
The numba lane is used when numba imports cleanly, unless the environment
variable DIFFEXC_NUMBA is set to 0/false/off, which forces the numpy lane.
"""
import os

_flag = os.environ.get("DIFFEXC_NUMBA", "").strip().lower()

if _flag in ("0", "false", "off", "no"):
    NUMBA_ENABLED = False
else:
    try:
        import numba  # noqa: F401
        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"


def get_kernels():
    """Return the active kernel module."""
    if NUMBA_ENABLED:
        from . import _kernels_numba
        return _kernels_numba
    from . import _kernels_numpy
    return _kernels_numpy
