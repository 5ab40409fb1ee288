"""Pure-numpy versions of the patch-extraction kernels.

Same contract as the compiled ``_kernels`` module; used when the extension
is not built or when ``SIPGS_PURE_PYTHON=1`` is set.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride):
    B, C, Hp, Wp = xp.shape
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    OH, OW = win.shape[2], win.shape[3]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        B * OH * OW, C * kh * kw
    )


def col2im(cols, B, C, Hp, Wp, kh, kw, stride):
    OH = (Hp - kh) // stride + 1
    OW = (Wp - kw) // stride + 1
    if cols.shape != (B * OH * OW, C * kh * kw):
        raise ValueError("col2im: column matrix shape does not match geometry")
    patches = cols.reshape(B, OH, OW, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((B, C, Hp, Wp))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride] += patches[:, :, i, j]
    return out
