# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.stdint cimport int64_t
from libcpp.unordered_map cimport unordered_map
from libcpp.utility cimport pair

cnp.import_array()


cdef tuple _drain(unordered_map[int64_t, double]& acc):
    cdef Py_ssize_t n = acc.size()
    keys = np.empty(n, dtype=np.int64)
    coefs = np.empty(n, dtype=np.float64)
    cdef int64_t[::1] kv = keys
    cdef double[::1] cv = coefs
    cdef Py_ssize_t i = 0
    cdef pair[int64_t, double] item
    for item in acc:
        kv[i] = item.first
        cv[i] = item.second
        i += 1
    order = np.argsort(keys, kind="stable")
    return keys[order], coefs[order]


def combine_packed(const int64_t[::1] keys, const double[::1] coefs):
    cdef unordered_map[int64_t, double] acc
    cdef Py_ssize_t i
    acc.reserve(keys.shape[0])
    with nogil:
        for i in range(keys.shape[0]):
            acc[keys[i]] += coefs[i]
    return _drain(acc)


def mul_packed(const int64_t[::1] ka, const double[::1] ca,
               const int64_t[::1] kb, const double[::1] cb):
    cdef unordered_map[int64_t, double] acc
    cdef Py_ssize_t i, j
    cdef int64_t ki
    cdef double ci
    acc.reserve(min(<Py_ssize_t>ka.shape[0] * kb.shape[0], 1 << 24))
    with nogil:
        for i in range(ka.shape[0]):
            ki = ka[i]
            ci = ca[i]
            for j in range(kb.shape[0]):
                acc[ki + kb[j]] += ci * cb[j]
    return _drain(acc)


def cd_sweep(const double[::1, :] Z, double[::1] r, double[::1] w,
             const double[::1] col_sq, double lam, const cnp.uint8_t[::1] active):
    cdef Py_ssize_t m = Z.shape[0], p = Z.shape[1], i, j
    cdef double rho, old, new, delta, max_change = 0.0
    with nogil:
        for j in range(p):
            if not active[j]:
                continue
            old = w[j]
            rho = 0.0
            for i in range(m):
                rho += Z[i, j] * r[i]
            rho = rho / m + col_sq[j] * old
            if rho > lam:
                new = (rho - lam) / col_sq[j]
            elif rho < -lam:
                new = (rho + lam) / col_sq[j]
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                for i in range(m):
                    r[i] -= delta * Z[i, j]
                w[j] = new
                if fabs(delta) > max_change:
                    max_change = fabs(delta)
    return max_change
