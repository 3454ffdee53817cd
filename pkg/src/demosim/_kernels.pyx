# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the alignment ranking and the partner market.

Arithmetic follows ``_fallback.py`` operation for operation so both
backends return bit-identical doubles.
"""

from libc.math cimport sqrt, exp, fabs
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy

cdef double ZERO_TARGET_PENALTY = 1e6


cdef double _relative_sd(double* d, double* t, double* r, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k
    cdef double total = 0.0, mean, acc = 0.0, dev
    for k in range(n):
        if t[k] == 0.0:
            r[k] = 0.0 if d[k] == 0.0 else fabs(d[k]) * ZERO_TARGET_PENALTY
        else:
            r[k] = d[k] / t[k]
        total += r[k]
    mean = total / n
    for k in range(n):
        dev = r[k] - mean
        acc += dev * dev
    return sqrt(acc / (n - 1))


cdef double* _load(object seq, Py_ssize_t n) except NULL:
    cdef double* buf = <double*> malloc(n * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef Py_ssize_t k
    for k in range(n):
        buf[k] = seq[k]
    return buf


def relative_sd(D, T):
    """Sample standard deviation of ``D[k] / T[k]``."""
    cdef Py_ssize_t n = len(D)
    if n < 2:
        raise ValueError("standard deviation needs at least two bins")
    cdef double* d = _load(D, n)
    cdef double* t = NULL
    cdef double* r = NULL
    cdef double out
    try:
        t = _load(T, n)
        r = <double*> malloc(n * sizeof(double))
        out = _relative_sd(d, t, r, n)
    finally:
        free(d)
        free(t)
        free(r)
    return out


def rank_scores(long h_size, D, T, bint literal):
    """Scores for [new household, join bin 1, ..., join bin n]."""
    cdef Py_ssize_t n = len(D)
    if n < 2:
        raise ValueError("ranking needs at least two bins")
    cdef Py_ssize_t x = h_size if h_size < n else n
    cdef Py_ssize_t i, j
    cdef double* base = _load(D, n)
    cdef double* d = NULL
    cdef double* t = NULL
    cdef double* r = NULL
    scores = [0.0] * (n + 1)
    try:
        t = _load(T, n)
        d = <double*> malloc(n * sizeof(double))
        r = <double*> malloc(n * sizeof(double))
        if d == NULL or r == NULL:
            raise MemoryError()
        memcpy(d, base, n * sizeof(double))
        d[x - 1] += 1.0
        scores[0] = _relative_sd(d, t, r, n)
        for i in range(1, n):
            memcpy(d, base, n * sizeof(double))
            j = x + i if x + i < n else n
            d[i - 1] -= 1.0
            d[j - 1] += 1.0
            scores[i] = _relative_sd(d, t, r, n)
        memcpy(d, base, n * sizeof(double))
        if literal:
            d[n - 1] += 1.0
        scores[n] = _relative_sd(d, t, r, n)
    finally:
        free(base)
        free(d)
        free(t)
        free(r)
    return scores


def partner_weights(double seeker_age, candidate_ages, double lam, double mu, bint seeker_is_male):
    """``exp(-lam * |male_age - female_age - mu|)`` for each candidate."""
    cdef double a, gap
    out = []
    for a in candidate_ages:
        gap = (seeker_age - a) if seeker_is_male else (a - seeker_age)
        out.append(exp(-lam * fabs(gap - mu)))
    return out
