"""Kernel backend selection.

The compiled extension is used when it imports; ``SMR_BACKEND=python``
forces the numpy fallback.  ``SMR_THREADS`` caps the worker threads the
compiled kernels may use (results are identical for any value).
"""
import logging
import os

log = logging.getLogger(__name__)

if os.environ.get("SMR_BACKEND", "").lower() == "python":
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        log.debug("compiled kernels unavailable, using numpy fallback")
        from . import _kernels_py as kernels

BACKEND = kernels.BACKEND


def n_threads():
    value = os.environ.get("SMR_THREADS")
    if not value:
        return os.cpu_count() or 1
    return max(1, int(value))


def get_kernels(name=None):
    """Return the kernel module by backend name ("cython", "python") or the active one."""
    if name is None:
        return kernels
    if name == "python":
        from . import _kernels_py
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
