"""Select the compiled kernel core, falling back to pure Python.

``SMILEGRID_BACKEND=python`` forces the fallback; ``cython`` makes a missing
compiled core an import error instead of a silent downgrade.
"""

import os

from . import _pykernels

_requested = os.environ.get("SMILEGRID_BACKEND", "auto").lower()

if _requested == "python":
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        kernels = _pykernels
        BACKEND = "python"


def get_kernels(name=None):
    """Return a kernel module by name (``"cython"``/``"python"``), default active."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
