# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Same contracts as lidarfield.kernels.numpy_backend; that module is the
readable reference. Values agree with the numpy backend to rounding
(accumulation orders differ), which tests/test_kernels.py asserts.
"""

import numpy as np

from libc.math cimport exp, expm1, floor


cdef inline unsigned long long _hash3(unsigned long long ix,
                                      unsigned long long iy,
                                      unsigned long long iz) nogil:
    return (ix * 1ULL) ^ (iy * 2654435761ULL) ^ (iz * 805459861ULL)


def hash_grid_forward(double[:, :, ::1] tables, double[:, ::1] x01, long[::1] res):
    cdef Py_ssize_t L = tables.shape[0]
    cdef Py_ssize_t T = tables.shape[1]
    cdef Py_ssize_t F = tables.shape[2]
    cdef Py_ssize_t P = x01.shape[0]
    out_arr = np.zeros((P, L * F), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef unsigned long long mask = <unsigned long long> (T - 1)
    cdef Py_ssize_t level, p, c, f, base, tix
    cdef double r, px, py, pz, i0x, i0y, i0z, fx, fy, fz, w
    cdef int bx, by, bz
    cdef unsigned long long h

    with nogil:
        for level in range(L):
            r = <double> res[level]
            base = level * F
            for p in range(P):
                px = x01[p, 0] * r
                py = x01[p, 1] * r
                pz = x01[p, 2] * r
                i0x = floor(px)
                i0y = floor(py)
                i0z = floor(pz)
                if i0x > r - 1.0: i0x = r - 1.0
                if i0y > r - 1.0: i0y = r - 1.0
                if i0z > r - 1.0: i0z = r - 1.0
                fx = px - i0x
                fy = py - i0y
                fz = pz - i0z
                for c in range(8):
                    bx = c & 1
                    by = (c >> 1) & 1
                    bz = (c >> 2) & 1
                    h = _hash3(<unsigned long long> i0x + bx,
                               <unsigned long long> i0y + by,
                               <unsigned long long> i0z + bz)
                    tix = <Py_ssize_t> (h & mask)
                    w = ((fx if bx else 1.0 - fx)
                         * (fy if by else 1.0 - fy)) * (fz if bz else 1.0 - fz)
                    for f in range(F):
                        out[p, base + f] += w * tables[level, tix, f]
    return out_arr


def hash_grid_backward(double[:, ::1] gout, double[:, ::1] x01, long[::1] res,
                       shape):
    cdef Py_ssize_t L = shape[0]
    cdef Py_ssize_t T = shape[1]
    cdef Py_ssize_t F = shape[2]
    cdef Py_ssize_t P = x01.shape[0]
    g_arr = np.zeros((L, T, F), dtype=np.float64)
    cdef double[:, :, ::1] g = g_arr
    cdef unsigned long long mask = <unsigned long long> (T - 1)
    cdef Py_ssize_t level, p, c, f, base, tix
    cdef double r, px, py, pz, i0x, i0y, i0z, fx, fy, fz, w
    cdef int bx, by, bz
    cdef unsigned long long h

    with nogil:
        for level in range(L):
            r = <double> res[level]
            base = level * F
            for p in range(P):
                px = x01[p, 0] * r
                py = x01[p, 1] * r
                pz = x01[p, 2] * r
                i0x = floor(px)
                i0y = floor(py)
                i0z = floor(pz)
                if i0x > r - 1.0: i0x = r - 1.0
                if i0y > r - 1.0: i0y = r - 1.0
                if i0z > r - 1.0: i0z = r - 1.0
                fx = px - i0x
                fy = py - i0y
                fz = pz - i0z
                for c in range(8):
                    bx = c & 1
                    by = (c >> 1) & 1
                    bz = (c >> 2) & 1
                    h = _hash3(<unsigned long long> i0x + bx,
                               <unsigned long long> i0y + by,
                               <unsigned long long> i0z + bz)
                    tix = <Py_ssize_t> (h & mask)
                    w = ((fx if bx else 1.0 - fx)
                         * (fy if by else 1.0 - fy)) * (fz if bz else 1.0 - fz)
                    for f in range(F):
                        g[level, tix, f] += w * gout[p, base + f]
    return g_arr


def composite_weights_forward(double[:, ::1] sdelta):
    cdef Py_ssize_t R = sdelta.shape[0]
    cdef Py_ssize_t N = sdelta.shape[1]
    w_arr = np.empty((R, N), dtype=np.float64)
    t_arr = np.empty((R, N), dtype=np.float64)
    cdef double[:, ::1] w = w_arr
    cdef double[:, ::1] trans = t_arr
    cdef Py_ssize_t ray, i
    cdef double cum, t

    with nogil:
        for ray in range(R):
            cum = 0.0
            for i in range(N):
                t = exp(-cum)
                trans[ray, i] = t
                w[ray, i] = t * (-expm1(-sdelta[ray, i]))
                cum += sdelta[ray, i]
    return w_arr, t_arr


def composite_weights_backward(double[:, ::1] g, double[:, ::1] sdelta,
                               double[:, ::1] w, double[:, ::1] trans):
    cdef Py_ssize_t R = sdelta.shape[0]
    cdef Py_ssize_t N = sdelta.shape[1]
    gx_arr = np.empty((R, N), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t ray, j
    cdef double suffix

    with nogil:
        for ray in range(R):
            suffix = 0.0
            for j in range(N - 1, -1, -1):
                gx[ray, j] = g[ray, j] * trans[ray, j] * exp(-sdelta[ray, j]) - suffix
                suffix += g[ray, j] * w[ray, j]
    return gx_arr
