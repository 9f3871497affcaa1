"""Backend selection for the hot loops.

The compiled extension is used when it imports; set VARPLANE_PURE=1 to
force the numpy fallback.
"""
import os

from . import _kernels_py as python_backend


def compiled_backend():
    """The extension module, or None if it was not built."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_impl = None
if os.environ.get("VARPLANE_PURE", "") in ("", "0"):
    _impl = compiled_backend()
if _impl is None:
    _impl = python_backend

BACKEND = _impl.BACKEND
trilinear = _impl.trilinear
plane_average = _impl.plane_average
plane_scatter = _impl.plane_scatter
