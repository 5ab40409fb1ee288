"""Backend selection for the convolution patch kernels.

The compiled Cython module is preferred; the numpy implementation is used
when the extension is missing or ``SIPGS_PURE_PYTHON`` is set to a truthy
value before import. ``BACKEND`` names the active choice.
"""
import os

from . import _kernels_py

if os.environ.get("SIPGS_PURE_PYTHON", "").lower() in ("1", "true", "yes"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im

__all__ = ["BACKEND", "im2col", "col2im"]
