"""Pure-Python semi-Markov lattice kernels (fallback for ``segen._kernels``).

Inputs for one instance:

* ``gen``: ``(m, L, J)``; ``gen[a, l-1, j]`` scores ``y[a+1..a+l]`` + ``$`` under ``j``
  (``-inf`` where the segment runs past ``m``);
* ``trans``: ``(m+1, J, J)``; ``trans[p, q, j]`` with ``p = 0`` the first-segment row ``q = 0``.
"""

import math

import numpy as np

NEG_INF = -math.inf


def _logadd(a, b):
    if a < b:
        a, b = b, a
    if b == NEG_INF:
        return a
    return a + math.log1p(math.exp(b - a))


def semimarkov_forward(gen, trans):
    """Return ``(alpha, log_count)``, both ``(m, J)``.

    ``alpha[i-1, j]`` is the log score of ``y[1..i]`` with the last segment
    labelled ``j``; ``log_count`` is the log of the expectation-semiring
    accumulator (sum over paths of probability times number of segments).
    """
    gen = np.asarray(gen, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    m, L, J = gen.shape
    alpha = np.full((m, J), NEG_INF)
    count = np.full((m, J), NEG_INF)
    msg = np.full((m, J), NEG_INF)
    msg_c = np.full((m, J), NEG_INF)
    for j in range(J):
        msg[0, j] = trans[0, 0, j]
        msg_c[0, j] = trans[0, 0, j]
    for i in range(1, m + 1):
        for j in range(J):
            acc = NEG_INF
            acc_c = NEG_INF
            for l in range(1, min(L, i) + 1):
                p = i - l
                g = gen[p, l - 1, j]
                acc = _logadd(acc, msg[p, j] + g)
                acc_c = _logadd(acc_c, msg_c[p, j] + g)
            alpha[i - 1, j] = acc
            count[i - 1, j] = acc_c
        if i < m:
            for j in range(J):
                acc = NEG_INF
                acc_c = NEG_INF
                for q in range(J):
                    t = trans[i, q, j]
                    acc = _logadd(acc, alpha[i - 1, q] + t)
                    acc_c = _logadd(acc_c, _logadd(count[i - 1, q], alpha[i - 1, q]) + t)
                msg[i, j] = acc
                msg_c[i, j] = acc_c
    return alpha, count


def semimarkov_viterbi(gen, trans):
    """Max-product pass. Returns ``(score, segments)`` with segments ``(start, end, record)``.

    ``start`` is 0-based inclusive and ``end`` exclusive. Ties go to the
    shorter segment, then the lower previous record, then the lower final record.
    """
    gen = np.asarray(gen, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    m, L, J = gen.shape
    delta = np.full((m, J), NEG_INF)
    back_len = np.zeros((m, J), dtype=np.int64)
    back_q = np.full((m, J), -1, dtype=np.int64)
    for i in range(1, m + 1):
        for j in range(J):
            best = NEG_INF
            best_l, best_q = 0, -1
            for l in range(1, min(L, i) + 1):
                p = i - l
                g = gen[p, l - 1, j]
                if p == 0:
                    s = trans[0, 0, j] + g
                    if s > best:
                        best, best_l, best_q = s, l, -1
                    continue
                for q in range(J):
                    s = (delta[p - 1, q] + trans[p, q, j]) + g
                    if s > best:
                        best, best_l, best_q = s, l, q
            delta[i - 1, j] = best
            back_len[i - 1, j] = best_l
            back_q[i - 1, j] = best_q
    j = 0
    for k in range(1, J):
        if delta[m - 1, k] > delta[m - 1, j]:
            j = k
    score = float(delta[m - 1, j])
    segments = []
    i = m
    if score == NEG_INF:
        return score, segments
    while i > 0:
        l = int(back_len[i - 1, j])
        q = int(back_q[i - 1, j])
        segments.append((i - l, i, j))
        i -= l
        j = q
    segments.reverse()
    return score, segments
