# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im kernels.

Same contracts as ``_pykernels``; loops run in a fixed order so results are
bitwise identical between calls.
"""

import numpy as np
cimport cython
from cython cimport floating


def im2col(floating[:, :, :, ::1] xp, int k, int stride, int out_h, int out_w):
    cdef Py_ssize_t b = xp.shape[0]
    cdef Py_ssize_t c = xp.shape[1]
    cdef Py_ssize_t n, ch, i, j, oy, ox, row, iy
    dtype = np.float64 if floating is double else np.float32
    out = np.empty((b, c * k * k, out_h * out_w), dtype=dtype)
    cdef floating[:, :, ::1] cols = out
    with nogil:
        for n in range(b):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        row = (ch * k + i) * k + j
                        for oy in range(out_h):
                            iy = oy * stride + i
                            for ox in range(out_w):
                                cols[n, row, oy * out_w + ox] = xp[n, ch, iy, ox * stride + j]
    return out


def col2im(floating[:, :, ::1] cols, int channels, int k, int stride,
           int out_h, int out_w, int hp, int wp):
    cdef Py_ssize_t b = cols.shape[0]
    cdef Py_ssize_t n, ch, i, j, oy, ox, row, iy
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((b, channels, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] canvas = out
    with nogil:
        for n in range(b):
            for ch in range(channels):
                for i in range(k):
                    for j in range(k):
                        row = (ch * k + i) * k + j
                        for oy in range(out_h):
                            iy = oy * stride + i
                            for ox in range(out_w):
                                canvas[n, ch, iy, ox * stride + j] += cols[n, row, oy * out_w + ox]
    return out
