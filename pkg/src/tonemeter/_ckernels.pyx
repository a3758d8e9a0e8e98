# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see _pykernels.py for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy

cnp.import_array()


def im2col(const double[:, :, :, ::1] x, int kh, int kw):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef int ph = kh // 2, pw = kw // 2
    xp_arr = np.zeros((n, h + kh - 1, w + kw - 1, c), dtype=np.float64)
    xp_arr[:, ph : ph + h, pw : pw + w, :] = np.asarray(x)
    out_arr = np.empty((n * h * w, kh * kw * c), dtype=np.float64)
    if out_arr.size == 0:
        return out_arr
    cdef double[:, :, :, ::1] xp = xp_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t b, yy, xx, i, row, run = kw * c
    with nogil:
        for b in range(n):
            for yy in range(h):
                for xx in range(w):
                    row = (b * h + yy) * w + xx
                    # each window row is one contiguous run of kw * c values
                    for i in range(kh):
                        memcpy(&out[row, i * run], &xp[b, yy + i, xx, 0], run * sizeof(double))
    return out_arr


def col2im(const double[:, ::1] cols, tuple shape, int kh, int kw):
    cdef Py_ssize_t n = shape[0], h = shape[1], w = shape[2], c = shape[3]
    cdef int ph = kh // 2, pw = kw // 2
    out_arr = np.zeros((n, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, yy, xx, i, j, ch, row, col, ty, tx
    # (i, j) outermost to match the accumulation order of the numpy fallback
    with nogil:
        for i in range(kh):
            for j in range(kw):
                for b in range(n):
                    for yy in range(h):
                        ty = yy + i - ph
                        if ty < 0 or ty >= h:
                            continue
                        for xx in range(w):
                            tx = xx + j - pw
                            if tx < 0 or tx >= w:
                                continue
                            row = (b * h + yy) * w + xx
                            col = (i * kw + j) * c
                            for ch in range(c):
                                out[b, ty, tx, ch] += cols[row, col + ch]
    return out_arr


def maxpool_forward(const double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h2 = x.shape[1] // 2, w2 = x.shape[2] // 2, c = x.shape[3]
    out_arr = np.empty((n, h2, w2, c), dtype=np.float64)
    idx_arr = np.empty((n, h2, w2, c), dtype=np.intp)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, yy, xx, ch, k, best
    cdef double v, m
    with nogil:
        for b in range(n):
            for yy in range(h2):
                for xx in range(w2):
                    for ch in range(c):
                        m = x[b, 2 * yy, 2 * xx, ch]
                        best = 0
                        for k in range(1, 4):
                            v = x[b, 2 * yy + k // 2, 2 * xx + k % 2, ch]
                            if v > m:
                                m = v
                                best = k
                        out[b, yy, xx, ch] = m
                        idx[b, yy, xx, ch] = best
    return out_arr, idx_arr


def maxpool_backward(const double[:, :, :, ::1] grad, const Py_ssize_t[:, :, :, ::1] idx):
    cdef Py_ssize_t n = grad.shape[0], h2 = grad.shape[1], w2 = grad.shape[2], c = grad.shape[3]
    out_arr = np.zeros((n, 2 * h2, 2 * w2, c), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, yy, xx, ch, k
    with nogil:
        for b in range(n):
            for yy in range(h2):
                for xx in range(w2):
                    for ch in range(c):
                        k = idx[b, yy, xx, ch]
                        out[b, 2 * yy + k // 2, 2 * xx + k % 2, ch] = grad[b, yy, xx, ch]
    return out_arr


def kmeans_assign(const double[:, ::1] points, const double[:, ::1] centers):
    cdef Py_ssize_t n = points.shape[0], k = centers.shape[0], p, q
    labels_arr = np.empty(n, dtype=np.intp)
    dist_arr = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t[::1] labels = labels_arr
    cdef double[::1] dist = dist_arr
    cdef double d0, d1, d2, d, best
    cdef Py_ssize_t arg
    with nogil:
        for p in range(n):
            best = 0.0
            arg = -1
            for q in range(k):
                d0 = points[p, 0] - centers[q, 0]
                d1 = points[p, 1] - centers[q, 1]
                d2 = points[p, 2] - centers[q, 2]
                d = d0 * d0 + d1 * d1 + d2 * d2
                if arg < 0 or d < best:
                    best = d
                    arg = q
            labels[p] = arg
            dist[p] = best
    return labels_arr, dist_arr
