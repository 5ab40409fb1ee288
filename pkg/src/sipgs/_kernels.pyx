# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled patch-extraction kernels backing conv2d and conv2d_transpose.

Both routines operate on an already zero-padded NCHW float64 array. The
column layout is ``(B*OH*OW, C*kh*kw)`` so that a convolution becomes a
single 2-D matrix product.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] xp, int kh, int kw, int stride):
    cdef Py_ssize_t B = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t Hp = xp.shape[2], Wp = xp.shape[3]
    cdef Py_ssize_t OH = (Hp - kh) // stride + 1
    cdef Py_ssize_t OW = (Wp - kw) // stride + 1
    cdef Py_ssize_t ncol = C * kh * kw
    out = np.empty((B * OH * OW, ncol), dtype=np.float64)
    cdef double[:, ::1] cols = out
    cdef Py_ssize_t b, oh, ow, c, i, j, row, col, h0, w0
    for b in range(B):
        for oh in range(OH):
            h0 = oh * stride
            for ow in range(OW):
                w0 = ow * stride
                row = (b * OH + oh) * OW + ow
                col = 0
                for c in range(C):
                    for i in range(kh):
                        for j in range(kw):
                            cols[row, col] = xp[b, c, h0 + i, w0 + j]
                            col += 1
    return out


def col2im(const double[:, ::1] cols, int B, int C, int Hp, int Wp,
           int kh, int kw, int stride):
    cdef Py_ssize_t OH = (Hp - kh) // stride + 1
    cdef Py_ssize_t OW = (Wp - kw) // stride + 1
    if cols.shape[0] != B * OH * OW or cols.shape[1] != C * kh * kw:
        raise ValueError("col2im: column matrix shape does not match geometry")
    out = np.zeros((B, C, Hp, Wp), dtype=np.float64)
    cdef double[:, :, :, ::1] xp = out
    cdef Py_ssize_t b, oh, ow, c, i, j, row, col, h0, w0
    for b in range(B):
        for oh in range(OH):
            h0 = oh * stride
            for ow in range(OW):
                w0 = ow * stride
                row = (b * OH + oh) * OW + ow
                col = 0
                for c in range(C):
                    for i in range(kh):
                        for j in range(kw):
                            xp[b, c, h0 + i, w0 + j] += cols[row, col]
                            col += 1
    return out
