"""Runtime selection of the sequence-recurrence kernels.

Two interchangeable implementations exist: a compiled extension and a pure
NumPy fallback. ``PIGRN_BACKEND`` picks one explicitly (``cython`` or
``numpy``); the default ``auto`` prefers the extension when it imported
cleanly.
"""

import os

from . import _recurrence_np

_VALID = ("auto", "cython", "numpy")

try:
    from . import _recurrence_cy
except ImportError:
    _recurrence_cy = None


def available_backends():
    """Names of the kernel implementations usable in this interpreter."""
    names = ["numpy"]
    if _recurrence_cy is not None:
        names.insert(0, "cython")
    return names


def select_backend(name=None):
    """Return (backend_name, kernel_module) for the requested backend.

    ``name=None`` reads ``PIGRN_BACKEND`` (default ``auto``). Raises
    RuntimeError when an explicitly requested backend is unavailable.
    """
    if name is None:
        name = os.environ.get("PIGRN_BACKEND", "auto")
    name = name.strip().lower()
    if name not in _VALID:
        raise RuntimeError(
            "unknown backend %r, expected one of %s" % (name, ", ".join(_VALID))
        )
    if name == "cython" and _recurrence_cy is None:
        raise RuntimeError("cython backend requested but the extension is not built")
    if name == "auto":
        name = "cython" if _recurrence_cy is not None else "numpy"
    module = _recurrence_cy if name == "cython" else _recurrence_np
    return name, module


BACKEND_NAME, kernels = select_backend()


def set_backend(name):
    """Switch the active kernels in place. Mainly for tests and benchmarks."""
    global BACKEND_NAME, kernels
    BACKEND_NAME, kernels = select_backend(name)
    return BACKEND_NAME


def active_backend():
    """Name of the kernels currently in use."""
    return BACKEND_NAME
