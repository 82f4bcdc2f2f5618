# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled quadrature hot loops (see _quadcore_py.py for the contract)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

BACKEND_NAME = "compiled"

cdef double SQRT3 = sqrt(3.0)
cdef double SQRT5 = sqrt(5.0)


cdef inline double _kval(int family, double sf2, double inv_ls, double d2) nogil:
    cdef double s, a
    s = sqrt(d2) * inv_ls
    if family == 0:
        return sf2 * exp(-0.5 * s * s)
    elif family == 1:
        a = SQRT3 * s
        return sf2 * (1.0 + a) * exp(-a)
    else:
        a = SQRT5 * s
        return sf2 * (1.0 + a + a * a / 3.0) * exp(-a)


def cross_gram(int family, double sf2, double ls, pts, w, targets):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] p = np.ascontiguousarray(pts, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ww = np.ascontiguousarray(w, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] tg = np.ascontiguousarray(targets, dtype=np.float64)
    cdef Py_ssize_t nb = p.shape[0], nq = p.shape[1], nt = tg.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((nb, nt))
    cdef Py_ssize_t b, q, t
    cdef double inv_ls = 1.0 / ls
    cdef double acc, dx, dy, dz, px, py, pz
    with nogil:
        for b in range(nb):
            for t in range(nt):
                acc = 0.0
                for q in range(nq):
                    dx = p[b, q, 0] - tg[t, 0]
                    dy = p[b, q, 1] - tg[t, 1]
                    dz = p[b, q, 2] - tg[t, 2]
                    acc += ww[q] * _kval(family, sf2, inv_ls, dx * dx + dy * dy + dz * dz)
                out[b, t] = acc
    return out


def pair_cross(int family, double sf2, double ls, pa, wa, pb, wb):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] a = np.ascontiguousarray(pa, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] b = np.ascontiguousarray(pb, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wwa = np.ascontiguousarray(wa, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wwb = np.ascontiguousarray(wb, dtype=np.float64)
    cdef Py_ssize_t na = a.shape[0], nq = a.shape[1]
    cdef Py_ssize_t nb = b.shape[0], nr = b.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((na, nb))
    cdef Py_ssize_t i, j, q, r
    cdef double inv_ls = 1.0 / ls
    cdef double acc, inner, dx, dy, dz
    with nogil:
        for i in range(na):
            for j in range(nb):
                acc = 0.0
                for q in range(nq):
                    inner = 0.0
                    for r in range(nr):
                        dx = a[i, q, 0] - b[j, r, 0]
                        dy = a[i, q, 1] - b[j, r, 1]
                        dz = a[i, q, 2] - b[j, r, 2]
                        inner += wwb[r] * _kval(family, sf2, inv_ls, dx * dx + dy * dy + dz * dz)
                    acc += wwa[q] * inner
                out[i, j] = acc
    return out
