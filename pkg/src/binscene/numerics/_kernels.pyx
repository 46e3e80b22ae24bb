# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col/col2im for float32 and float64 inputs."""
import numpy as np
cimport cython

ctypedef fused real:
    float
    double


def _im2col(real[:, :, :, ::1] xp, int kh, int kw, int sh, int sw, int dh, int dw,
            int oh, int ow, real[:, :, ::1] out):
    cdef Py_ssize_t n, c, i, j, y, x, row, col, r0, c0
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[1]
    for n in range(N):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    row = (c * kh + i) * kw + j
                    for y in range(oh):
                        r0 = y * sh + i * dh
                        c0 = j * dw
                        col = y * ow
                        for x in range(ow):
                            out[n, row, col + x] = xp[n, c, r0, c0 + x * sw]


def _col2im(real[:, :, ::1] cols, int kh, int kw, int sh, int sw, int dh, int dw,
            int oh, int ow, real[:, :, :, ::1] out):
    cdef Py_ssize_t n, c, i, j, y, x, row, col, r0, c0
    cdef Py_ssize_t N = out.shape[0], C = out.shape[1]
    for n in range(N):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    row = (c * kh + i) * kw + j
                    for y in range(oh):
                        r0 = y * sh + i * dh
                        c0 = j * dw
                        col = y * ow
                        for x in range(ow):
                            out[n, c, r0, c0 + x * sw] += cols[n, row, col + x]


def im2col(xp, kh, kw, sh, sw, dh, dw, oh, ow):
    xp = np.ascontiguousarray(xp)
    n, c = xp.shape[0], xp.shape[1]
    out = np.empty((n, c * kh * kw, oh * ow), dtype=xp.dtype)
    _im2col(xp, kh, kw, sh, sw, dh, dw, oh, ow, out)
    return out


def col2im(cols, n, c, hp, wp, kh, kw, sh, sw, dh, dw, oh, ow):
    cols = np.ascontiguousarray(cols)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    _col2im(cols, kh, kw, sh, sw, dh, dw, oh, ow, out)
    return out
