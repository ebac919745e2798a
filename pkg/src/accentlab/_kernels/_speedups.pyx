# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled CTC forward-backward and edit-distance kernels.

Mirrors _fallback.py; tight C loops over the state dimension instead of
numpy vector ops.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log1p, INFINITY

cnp.import_array()


cdef inline double logaddexp2(double a, double b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a >= b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def ctc_loss(double[:, ::1] log_probs, int[::1] ext, int blank=0):
    cdef Py_ssize_t T = log_probs.shape[0]
    cdef Py_ssize_t L = ext.shape[0]
    cdef Py_ssize_t t, s
    cdef double acc
    alpha_arr = np.full(L, -INFINITY)
    prev_arr = np.full(L, -INFINITY)
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] prev = prev_arr

    alpha[0] = log_probs[0, ext[0]]
    if L > 1:
        alpha[1] = log_probs[0, ext[1]]
    for t in range(1, T):
        prev_arr[:] = alpha_arr
        for s in range(L - 1, -1, -1):
            acc = prev[s]
            if s >= 1:
                acc = logaddexp2(acc, prev[s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                acc = logaddexp2(acc, prev[s - 2])
            alpha[s] = acc + log_probs[t, ext[s]]
    if L > 1:
        return -logaddexp2(alpha[L - 1], alpha[L - 2])
    return -alpha[L - 1]


def ctc_loss_grad(double[:, ::1] log_probs, int[::1] ext, int blank=0):
    cdef Py_ssize_t T = log_probs.shape[0]
    cdef Py_ssize_t S = log_probs.shape[1]
    cdef Py_ssize_t L = ext.shape[0]
    cdef Py_ssize_t t, s
    cdef double acc, log_p

    alphas_arr = np.full((T, L), -INFINITY)
    betas_arr = np.full((T, L), -INFINITY)
    gamma_arr = np.zeros((T, S))
    cdef double[:, ::1] alphas = alphas_arr
    cdef double[:, ::1] betas = betas_arr
    cdef double[:, ::1] gamma = gamma_arr

    alphas[0, 0] = log_probs[0, ext[0]]
    if L > 1:
        alphas[0, 1] = log_probs[0, ext[1]]
    for t in range(1, T):
        for s in range(L):
            acc = alphas[t - 1, s]
            if s >= 1:
                acc = logaddexp2(acc, alphas[t - 1, s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                acc = logaddexp2(acc, alphas[t - 1, s - 2])
            alphas[t, s] = acc + log_probs[t, ext[s]]

    betas[T - 1, L - 1] = 0.0
    if L > 1:
        betas[T - 1, L - 2] = 0.0
    for t in range(T - 2, -1, -1):
        for s in range(L):
            acc = betas[t + 1, s] + log_probs[t + 1, ext[s]]
            if s + 1 < L:
                acc = logaddexp2(acc, betas[t + 1, s + 1] + log_probs[t + 1, ext[s + 1]])
            if s + 2 < L and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                acc = logaddexp2(acc, betas[t + 1, s + 2] + log_probs[t + 1, ext[s + 2]])
            betas[t, s] = acc

    if L > 1:
        log_p = logaddexp2(alphas[T - 1, L - 1], alphas[T - 1, L - 2])
    else:
        log_p = alphas[T - 1, L - 1]
    if log_p == -INFINITY:
        # infeasible target: no occupancy mass to distribute
        return INFINITY, gamma_arr

    for t in range(T):
        for s in range(L):
            gamma[t, ext[s]] += exp(alphas[t, s] + betas[t, s] - log_p)
    return -log_p, gamma_arr


def levenshtein(int[::1] a, int[::1] b):
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    cdef Py_ssize_t i, j
    cdef long cost, best, up, left, diag
    row_arr = np.arange(m + 1, dtype=np.int64)
    cdef long[::1] row = row_arr
    cdef long prev_diag, tmp
    for i in range(n):
        prev_diag = row[0]
        row[0] = i + 1
        for j in range(1, m + 1):
            cost = 0 if a[i] == b[j - 1] else 1
            diag = prev_diag + cost
            up = row[j] + 1
            left = row[j - 1] + 1
            best = diag
            if up < best:
                best = up
            if left < best:
                best = left
            prev_diag = row[j]
            row[j] = best
    return int(row[m])
