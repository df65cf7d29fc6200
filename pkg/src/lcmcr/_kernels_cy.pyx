# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled EM step for the independence model; mirrors _kernels_py."""

import numpy as np

cimport numpy as cnp
from libc.math cimport log, log1p

cnp.import_array()


def em_step_indep(const unsigned char[:, ::1] bits,
                  const double[::1] counts,
                  const double[::1] weights,
                  const double[:, ::1] probs,
                  double eps):
    """Same contract as lcmcr._kernels_py.em_step_indep."""
    cdef Py_ssize_t P = bits.shape[0]
    cdef Py_ssize_t K = bits.shape[1]
    cdef Py_ssize_t L = weights.shape[0]
    cdef Py_ssize_t p, k, x

    pc_arr = np.empty((L, K))
    qc_arr = np.empty((L, K))
    cond_arr = np.empty(L)
    cond0_arr = np.empty(L)
    tot_arr = np.zeros(L)
    new_w_arr = np.empty(L)
    new_p_arr = np.zeros((L, K))
    cdef double[:, ::1] pc = pc_arr
    cdef double[:, ::1] qc = qc_arr
    cdef double[::1] cond = cond_arr
    cdef double[::1] cond0 = cond0_arr
    cdef double[::1] tot = tot_arr
    cdef double[::1] new_w = new_w_arr
    cdef double[:, ::1] new_p = new_p_arr

    cdef double v, cell, z, ll = 0.0, n = 0.0, p0 = 0.0, imputed, total, dmax, d

    for x in range(L):
        for k in range(K):
            v = probs[x, k]
            if v < eps:
                v = eps
            elif v > 1.0 - eps:
                v = 1.0 - eps
            pc[x, k] = v
            qc[x, k] = 1.0 - v

    for p in range(P):
        cell = 0.0
        for x in range(L):
            v = weights[x]
            for k in range(K):
                if bits[p, k]:
                    v *= pc[x, k]
                else:
                    v *= qc[x, k]
            cond[x] = v
            cell += v
        if p == 0:
            p0 = cell
            for x in range(L):
                cond0[x] = cond[x]
            continue
        n += counts[p]
        if counts[p] > 0.0:
            ll += counts[p] * log(cell)
            for x in range(L):
                z = counts[p] * cond[x] / cell
                tot[x] += z
                for k in range(K):
                    if bits[p, k]:
                        new_p[x, k] += z
    ll -= n * log1p(-p0)

    imputed = n * p0 / (1.0 - p0)
    for x in range(L):
        tot[x] += imputed * cond0[x] / p0

    total = 0.0
    for x in range(L):
        total += tot[x]
    dmax = 0.0
    for x in range(L):
        new_w[x] = tot[x] / total
        d = new_w[x] - weights[x]
        if d < 0.0:
            d = -d
        if d > dmax:
            dmax = d
        v = tot[x]
        if v < 1e-300:
            v = 1e-300
        for k in range(K):
            new_p[x, k] = new_p[x, k] / v
            d = new_p[x, k] - probs[x, k]
            if d < 0.0:
                d = -d
            if d > dmax:
                dmax = d

    return ll, new_w_arr, new_p_arr, dmax
