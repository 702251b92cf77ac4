# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for geometric-median computations.

Semantics mirror ``_kernels_py`` exactly; see that module for the contract.
"""

import numpy as np
from libc.math cimport sqrt


cdef inline double _dist(const double[:, ::1] pts, Py_ssize_t i, const double[::1] z) noexcept nogil:
    cdef Py_ssize_t j
    cdef double s = 0.0, t
    for j in range(pts.shape[1]):
        t = z[j] - pts[i, j]
        s += t * t
    return sqrt(s)


def objective(const double[:, ::1] pts, const double[::1] z):
    cdef Py_ssize_t i, n = pts.shape[0]
    cdef double acc = 0.0
    for i in range(n):
        acc += _dist(pts, i, z)
    return acc / n


def objective_many(const double[:, ::1] pts, const double[:, ::1] cands):
    cdef Py_ssize_t m = cands.shape[0], n = pts.shape[0], p = pts.shape[1]
    cdef Py_ssize_t c, i, j
    cdef double acc, s, t
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for c in range(m):
            acc = 0.0
            for i in range(n):
                s = 0.0
                for j in range(p):
                    t = cands[c, j] - pts[i, j]
                    s += t * t
                acc += sqrt(s)
            o[c] = acc / n
    return out


def weiszfeld(const double[:, ::1] pts, const double[::1] z0, double move_tol,
              double obj_tol, long max_iter, double floor):
    cdef Py_ssize_t n = pts.shape[0], p = pts.shape[1]
    cdef Py_ssize_t i, j
    cdef long it = 0
    cdef bint converged = False
    z_arr = np.array(z0, dtype=np.float64, copy=True)
    new_arr = np.empty(p, dtype=np.float64)
    r_arr = np.empty(p, dtype=np.float64)
    cdef double[::1] z = z_arr
    cdef double[::1] zn = new_arr
    cdef double[::1] rv = r_arr
    cdef double den, w, di, dn, move, dec, t, num, r, m, keep
    cdef double[::1] tmp
    with nogil:
        while it < max_iter:
            it += 1
            for j in range(p):
                zn[j] = 0.0
                rv[j] = 0.0
            den = 0.0
            m = 0.0
            for i in range(n):
                di = _dist(pts, i, z)
                if di <= floor:
                    m += 1.0
                    continue
                w = 1.0 / di
                den += w
                for j in range(p):
                    zn[j] += w * pts[i, j]
                    rv[j] += w * (pts[i, j] - z[j])
            if den == 0.0:
                converged = True
                break
            for j in range(p):
                zn[j] = zn[j] / den
            if m > 0.0:
                r = 0.0
                for j in range(p):
                    r += rv[j] * rv[j]
                r = sqrt(r)
                if r <= m:
                    converged = True
                    break
                keep = m / r
                for j in range(p):
                    zn[j] = (1.0 - keep) * zn[j] + keep * z[j]
            move = 0.0
            for j in range(p):
                t = zn[j] - z[j]
                move += t * t
            move = sqrt(move)
            # objective decrease as a sum of norm differences, written to
            # avoid cancellation when some points have huge norm
            dec = 0.0
            for i in range(n):
                di = _dist(pts, i, z)
                dn = _dist(pts, i, zn)
                if di + dn > 0.0:
                    num = 0.0
                    for j in range(p):
                        num += (z[j] - zn[j]) * (z[j] + zn[j] - 2.0 * pts[i, j])
                    dec += num / (di + dn)
            dec = dec / n
            if dec < 0.0:
                converged = True
                break
            tmp = z
            z = zn
            zn = tmp
            if move < move_tol or dec < obj_tol:
                converged = True
                break
    return np.asarray(z).copy(), int(it), bool(converged)
