# cython: language_level=3
"""Compiled belief kernels.

Semantics must match mcas._core_py exactly; tie-breaks always pick the
lowest index. All arrays are float64 and C-contiguous; model arrays
arrive read-only, hence the const views.
"""

import numpy as np

cimport cython


def belief_update(const double[:, :, ::1] T, const double[:, :, ::1] Z,
                  const double[::1] b, Py_ssize_t a, Py_ssize_t o,
                  double[::1] out):
    """out <- normalized posterior over next states; returns the norm.

    out is only a valid distribution when the returned norm is > 0.
    """
    cdef Py_ssize_t S = T.shape[0], Sp = T.shape[2]
    cdef Py_ssize_t s, sp
    cdef double acc, norm = 0.0
    for sp in range(Sp):
        acc = 0.0
        for s in range(S):
            acc += b[s] * T[s, a, sp]
        acc *= Z[a, sp, o]
        out[sp] = acc
        norm += acc
    if norm > 0.0:
        for sp in range(Sp):
            out[sp] /= norm
    return norm


def predicted_belief(const double[:, :, ::1] T, const double[::1] b,
                     Py_ssize_t a, double[::1] out):
    """out <- one-step state distribution under action a, ignoring observations."""
    cdef Py_ssize_t S = T.shape[0], Sp = T.shape[2]
    cdef Py_ssize_t s, sp
    cdef double acc
    for sp in range(Sp):
        acc = 0.0
        for s in range(S):
            acc += b[s] * T[s, a, sp]
        out[sp] = acc


def obs_likelihoods(const double[:, :, ::1] T, const double[:, :, ::1] Z,
                    const double[::1] b, Py_ssize_t a, double[::1] out):
    """out[o] <- P(o | b, a) for every observation o."""
    cdef Py_ssize_t S = T.shape[0], Sp = T.shape[2], O = Z.shape[2]
    cdef Py_ssize_t s, sp, o
    cdef double acc
    pred_arr = np.empty(Sp, dtype=np.float64)
    cdef double[::1] pred = pred_arr
    for sp in range(Sp):
        acc = 0.0
        for s in range(S):
            acc += b[s] * T[s, a, sp]
        pred[sp] = acc
    for o in range(O):
        out[o] = 0.0
    for sp in range(Sp):
        acc = pred[sp]
        if acc == 0.0:
            continue
        for o in range(O):
            out[o] += acc * Z[a, sp, o]


def best_alpha(const double[:, ::1] alphas, const double[::1] b):
    """Index and value of the maximizing vector; ties go to the lowest index."""
    cdef Py_ssize_t K = alphas.shape[0], S = alphas.shape[1]
    cdef Py_ssize_t k, s, best = 0
    cdef double val, top
    top = 0.0
    for s in range(S):
        top += alphas[0, s] * b[s]
    for k in range(1, K):
        val = 0.0
        for s in range(S):
            val += alphas[k, s] * b[s]
        if val > top:
            top = val
            best = k
    return best, top


def l1_nearest(const double[:, ::1] mat, const double[::1] b):
    """Row of mat closest to b in L1; ties go to the lowest row index."""
    cdef Py_ssize_t N = mat.shape[0], S = mat.shape[1]
    cdef Py_ssize_t i, s, best = 0
    cdef double d, diff, top
    top = 0.0
    for s in range(S):
        diff = mat[0, s] - b[s]
        top += diff if diff >= 0.0 else -diff
    for i in range(1, N):
        d = 0.0
        for s in range(S):
            diff = mat[i, s] - b[s]
            d += diff if diff >= 0.0 else -diff
        if d < top:
            top = d
            best = i
    return best, top


def l1_closest_pair(const double[:, ::1] mat):
    """Closest pair of rows (i < j) in L1; ties resolved in (i, j) scan order."""
    cdef Py_ssize_t N = mat.shape[0], S = mat.shape[1]
    cdef Py_ssize_t i, j, s, bi = 0, bj = 1
    cdef double d, diff, top = 1e308
    for i in range(N):
        for j in range(i + 1, N):
            d = 0.0
            for s in range(S):
                diff = mat[i, s] - mat[j, s]
                d += diff if diff >= 0.0 else -diff
            if d < top:
                top = d
                bi = i
                bj = j
    return bi, bj, top


def conflate_rows(const double[:, ::1] mat, double[::1] out):
    """out <- normalized pointwise product of the rows; returns the norm.

    A zero norm means the supports are disjoint and out is meaningless.
    """
    cdef Py_ssize_t N = mat.shape[0], S = mat.shape[1]
    cdef Py_ssize_t i, s
    cdef double acc, norm = 0.0
    for s in range(S):
        acc = mat[0, s]
        for i in range(1, N):
            acc *= mat[i, s]
        out[s] = acc
        norm += acc
    if norm > 0.0:
        for s in range(S):
            out[s] /= norm
    return norm
