"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise, or when the
environment variable ``SPIKEATCONV_PURE_PYTHON`` is set to a non-empty value,
the numpy implementation is used. Both expose the same functions.
"""

import os

from . import _kernels_py

if os.environ.get("SPIKEATCONV_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

ATAN = _kernels_py.ATAN
SIGMOID = _kernels_py.SIGMOID

lif_forward = _impl.lif_forward
lif_backward = _impl.lif_backward
dwconv_forward = _impl.dwconv_forward
dwconv_backward = _impl.dwconv_backward


def available_backends():
    """Return ``{name: module}`` for every backend that can be imported here."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["cython"] = _kernels
    return found
