# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled message-passing kernels.

Mirrors ``gclviews._pykernels`` function for function; ``gclviews.kernels``
picks whichever is importable.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def scatter_add_rows(const double[:, ::1] src, const long[::1] index, Py_ssize_t out_size):
    cdef Py_ssize_t n_rows = src.shape[0], width = src.shape[1]
    cdef Py_ssize_t i, j, dst
    out = np.zeros((out_size, width), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n_rows):
        dst = index[i]
        if dst < 0 or dst >= out_size:
            raise IndexError(f"index {dst} out of range for out_size {out_size}")
        for j in range(width):
            o[dst, j] += src[i, j]
    return out


def neighbor_sum(const double[:, ::1] h, const long[::1] src, const long[::1] dst, Py_ssize_t out_size):
    """out[dst[e]] += h[src[e]] for every arc e, without materializing h[src]."""
    cdef Py_ssize_t n_arcs = src.shape[0], width = h.shape[1], n_in = h.shape[0]
    cdef Py_ssize_t e, j, s, d
    out = np.zeros((out_size, width), dtype=np.float64)
    cdef double[:, ::1] o = out
    for e in range(n_arcs):
        s = src[e]
        d = dst[e]
        if s < 0 or s >= n_in or d < 0 or d >= out_size:
            raise IndexError(f"arc ({s}, {d}) out of range")
        for j in range(width):
            o[d, j] += h[s, j]
    return out


def keep_arcs(const long[::1] src, const long[::1] dst, const unsigned char[::1] dropped):
    """Boolean mask of arcs with neither endpoint dropped."""
    cdef Py_ssize_t n_arcs = src.shape[0], e
    mask = np.empty(n_arcs, dtype=np.bool_)
    cdef unsigned char[::1] m = mask.view(np.uint8)
    for e in range(n_arcs):
        m[e] = (dropped[src[e]] | dropped[dst[e]]) == 0
    return mask
