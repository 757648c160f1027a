# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled semi-Markov lattice kernels. Same contract as ``segen._kernels_py``."""

import numpy as np

from libc.math cimport exp, log1p, INFINITY


cdef inline double _logadd(double a, double b) noexcept nogil:
    cdef double t
    if a < b:
        t = a
        a = b
        b = t
    if b == -INFINITY:
        return a
    return a + log1p(exp(b - a))


def semimarkov_forward(gen_in, trans_in):
    cdef const double[:, :, ::1] gen = np.ascontiguousarray(gen_in, dtype=np.float64)
    cdef const double[:, :, ::1] trans = np.ascontiguousarray(trans_in, dtype=np.float64)
    cdef Py_ssize_t m = gen.shape[0], L = gen.shape[1], J = gen.shape[2]
    alpha_arr = np.full((m, J), -np.inf)
    count_arr = np.full((m, J), -np.inf)
    msg_arr = np.full((m, J), -np.inf)
    msgc_arr = np.full((m, J), -np.inf)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] count = count_arr
    cdef double[:, ::1] msg = msg_arr
    cdef double[:, ::1] msg_c = msgc_arr
    cdef Py_ssize_t i, j, l, p, q, top
    cdef double acc, acc_c, g, t
    with nogil:
        for j in range(J):
            msg[0, j] = trans[0, 0, j]
            msg_c[0, j] = trans[0, 0, j]
        for i in range(1, m + 1):
            top = L if L < i else i
            for j in range(J):
                acc = -INFINITY
                acc_c = -INFINITY
                for l in range(1, top + 1):
                    p = i - l
                    g = gen[p, l - 1, j]
                    acc = _logadd(acc, msg[p, j] + g)
                    acc_c = _logadd(acc_c, msg_c[p, j] + g)
                alpha[i - 1, j] = acc
                count[i - 1, j] = acc_c
            if i < m:
                for j in range(J):
                    acc = -INFINITY
                    acc_c = -INFINITY
                    for q in range(J):
                        t = trans[i, q, j]
                        acc = _logadd(acc, alpha[i - 1, q] + t)
                        acc_c = _logadd(acc_c, _logadd(count[i - 1, q], alpha[i - 1, q]) + t)
                    msg[i, j] = acc
                    msg_c[i, j] = acc_c
    return alpha_arr, count_arr


def semimarkov_viterbi(gen_in, trans_in):
    cdef const double[:, :, ::1] gen = np.ascontiguousarray(gen_in, dtype=np.float64)
    cdef const double[:, :, ::1] trans = np.ascontiguousarray(trans_in, dtype=np.float64)
    cdef Py_ssize_t m = gen.shape[0], L = gen.shape[1], J = gen.shape[2]
    delta_arr = np.full((m, J), -np.inf)
    blen_arr = np.zeros((m, J), dtype=np.int64)
    bq_arr = np.full((m, J), -1, dtype=np.int64)
    cdef double[:, ::1] delta = delta_arr
    cdef long long[:, ::1] back_len = blen_arr
    cdef long long[:, ::1] back_q = bq_arr
    cdef Py_ssize_t i, j, l, p, q, top, best_l, best_q
    cdef double best, s, g
    with nogil:
        for i in range(1, m + 1):
            top = L if L < i else i
            for j in range(J):
                best = -INFINITY
                best_l = 0
                best_q = -1
                for l in range(1, top + 1):
                    p = i - l
                    g = gen[p, l - 1, j]
                    if p == 0:
                        s = trans[0, 0, j] + g
                        if s > best:
                            best = s
                            best_l = l
                            best_q = -1
                        continue
                    for q in range(J):
                        s = (delta[p - 1, q] + trans[p, q, j]) + g
                        if s > best:
                            best = s
                            best_l = l
                            best_q = q
                delta[i - 1, j] = best
                back_len[i - 1, j] = best_l
                back_q[i - 1, j] = best_q
    cdef Py_ssize_t k
    j = 0
    for k in range(1, J):
        if delta[m - 1, k] > delta[m - 1, j]:
            j = k
    score = float(delta[m - 1, j])
    segments = []
    if score == -np.inf:
        return score, segments
    i = m
    while i > 0:
        l = back_len[i - 1, j]
        q = back_q[i - 1, j]
        segments.append((int(i - l), int(i), int(j)))
        i -= l
        j = q
    segments.reverse()
    return score, segments
