# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled power-flow kernels; same contract as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin

cnp.import_array()


def power_injections(const double[::1] vm, const double[::1] va, const double[:, ::1] ymag,
                     const double[:, ::1] yang):
    cdef Py_ssize_t n = vm.shape[0]
    cdef Py_ssize_t i, j
    cdef double a, m, sp, sq
    p_out = np.empty(n)
    q_out = np.empty(n)
    cdef double[::1] p = p_out
    cdef double[::1] q = q_out
    for i in range(n):
        sp = 0.0
        sq = 0.0
        for j in range(n):
            m = ymag[i, j]
            if m == 0.0:
                continue
            a = yang[i, j] - va[i] + va[j]
            sp += m * vm[j] * cos(a)
            sq += m * vm[j] * sin(a)
        p[i] = vm[i] * sp
        q[i] = -vm[i] * sq
    return p_out, q_out


def jacobian_blocks(const double[::1] vm, const double[::1] va, const double[:, ::1] ymag,
                    const double[:, ::1] yang,
                    const cnp.intp_t[::1] idx):
    cdef Py_ssize_t n = vm.shape[0]
    cdef Py_ssize_t k = idx.shape[0]
    cdef Py_ssize_t r, c, i, j
    cdef double a, m, ca, sa, sum_c, sum_s
    pv_o = np.zeros((k, k))
    pd_o = np.zeros((k, k))
    qv_o = np.zeros((k, k))
    qd_o = np.zeros((k, k))
    cdef double[:, ::1] pv = pv_o
    cdef double[:, ::1] pd = pd_o
    cdef double[:, ::1] qv = qv_o
    cdef double[:, ::1] qd = qd_o
    for r in range(k):
        i = idx[r]
        sum_c = 0.0
        sum_s = 0.0
        for j in range(n):
            if j == i:
                continue
            m = ymag[i, j]
            if m == 0.0:
                continue
            a = yang[i, j] - va[i] + va[j]
            sum_c += vm[j] * m * cos(a)
            sum_s += vm[j] * m * sin(a)
        for c in range(k):
            j = idx[c]
            if j == i:
                continue
            m = ymag[i, j]
            if m == 0.0:
                continue
            a = yang[i, j] - va[i] + va[j]
            ca = cos(a)
            sa = sin(a)
            pv[r, c] = vm[i] * m * ca
            qv[r, c] = -vm[i] * m * sa
            pd[r, c] = -vm[i] * vm[j] * m * sa
            qd[r, c] = -vm[i] * vm[j] * m * ca
        m = ymag[i, i]
        pv[r, r] = 2.0 * vm[i] * m * cos(yang[i, i]) + sum_c
        qv[r, r] = -2.0 * vm[i] * m * sin(yang[i, i]) - sum_s
        pd[r, r] = vm[i] * sum_s
        qd[r, r] = vm[i] * sum_c
    return pv_o, pd_o, qv_o, qd_o
