# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-particle likelihood kernels.

Each particle is reduced by exactly one thread, in a fixed pair order, so the
result does not depend on the thread count. Per particle, the linear
predictors are first written to a scratch row, then reduced in a flat loop
the compiler can vectorise.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange, parallel, threadid
from libc.math cimport exp, log, sqrt, fabs, fmax

cnp.import_array()


cdef void _predictors(const double[:, :, ::1] X, Py_ssize_t m, double alpha,
                      double scale, int link, double* eta, double* coords) noexcept nogil:
    # coords holds the particle coordinate-major so the inner loop is unit stride
    cdef Py_ssize_t n = X.shape[1], d = X.shape[2]
    cdef Py_ssize_t i, j, k, p = 0, width
    cdef double xi, diff, c2 = scale * scale
    for k in range(d):
        for j in range(n):
            coords[k * n + j] = X[m, j, k]
    for i in range(n - 1):
        width = n - i - 1
        for j in range(width):
            eta[p + j] = 0.0
        for k in range(d):
            xi = coords[k * n + i]
            if link == 0:
                for j in range(width):
                    diff = xi - coords[k * n + i + 1 + j]
                    eta[p + j] += diff * diff
            else:
                for j in range(width):
                    eta[p + j] += xi * coords[k * n + i + 1 + j]
        if link == 0:
            for j in range(width):
                eta[p + j] = alpha - scale * sqrt(eta[p + j])
        else:
            for j in range(width):
                eta[p + j] = alpha + c2 * eta[p + j]
        p = p + width


cdef double _bernoulli(const double* eta, const double* y, Py_ssize_t P) noexcept nogil:
    cdef Py_ssize_t p
    cdef double total = 0.0
    for p in range(P):
        total += y[p] * eta[p] - (fmax(eta[p], 0.0) + log(1.0 + exp(-fabs(eta[p]))))
    return total


cdef double _bernoulli_grad(const double* eta, const double* y, Py_ssize_t P) noexcept nogil:
    cdef Py_ssize_t p
    cdef double total = 0.0
    for p in range(P):
        total += y[p] - 1.0 / (1.0 + exp(-eta[p]))
    return total


cdef double _poisson(const double* eta, const double* y, Py_ssize_t P) noexcept nogil:
    cdef Py_ssize_t p
    cdef double total = 0.0
    for p in range(P):
        total += y[p] * eta[p] - exp(eta[p])
    return total


cdef double _poisson_grad(const double* eta, const double* y, Py_ssize_t P) noexcept nogil:
    cdef Py_ssize_t p
    cdef double total = 0.0
    for p in range(P):
        total += y[p] - exp(eta[p])
    return total


cdef void _particle(const double[:, :, ::1] X, const double* y, Py_ssize_t P,
                    Py_ssize_t m, double alpha, double scale, int link, int lik,
                    double* eta, double* out, double* grad) noexcept nogil:
    _predictors(X, m, alpha, scale, link, eta, eta + P)
    if lik == 0:
        out[m] = _bernoulli(eta, y, P)
        if grad != NULL:
            grad[m] = _bernoulli_grad(eta, y, P)
    else:
        out[m] = _poisson(eta, y, P)
        if grad != NULL:
            grad[m] = _poisson_grad(eta, y, P)


def _run(const double[:, :, ::1] X, Y, double alpha, double scale, int link,
         int lik, int nthreads, bint with_grad):
    cdef Py_ssize_t M = X.shape[0], n = X.shape[1]
    cdef Py_ssize_t P = n * (n - 1) // 2
    iu, ju = np.triu_indices(n, k=1)
    yflat = np.ascontiguousarray(np.asarray(Y, dtype=np.float64)[iu, ju])
    cdef const double[::1] y = yflat
    nthreads = max(1, nthreads)
    scratch = np.empty((nthreads, P + n * X.shape[2] + 1), dtype=np.float64)
    cdef double[:, ::1] eta = scratch
    out = np.empty(M, dtype=np.float64)
    gout = np.empty(M, dtype=np.float64) if with_grad else None
    cdef double[::1] res = out
    cdef double* gptr = NULL
    cdef double[::1] gres
    if with_grad:
        gres = gout
        gptr = &gres[0] if M > 0 else NULL
    cdef Py_ssize_t m
    cdef int tid
    if M == 0:
        return out, gout
    if P == 0:
        out[:] = 0.0
        if with_grad:
            gout[:] = 0.0
        return out, gout
    if nthreads == 1:
        with nogil:
            for m in range(M):
                _particle(X, &y[0], P, m, alpha, scale, link, lik, &eta[0, 0], &res[0], gptr)
    else:
        with nogil, parallel(num_threads=nthreads):
            tid = threadid()
            for m in prange(M, schedule="static"):
                _particle(X, &y[0], P, m, alpha, scale, link, lik, &eta[tid, 0], &res[0], gptr)
    return out, gout


def obs_loglik(const double[:, :, ::1] X, Y, double alpha, double scale=1.0,
               int link=0, int lik=0, int nthreads=1):
    """Log observation density (up to the Poisson factorial term) per particle."""
    return _run(X, Y, alpha, scale, link, lik, nthreads, False)[0]


def obs_loglik_grad(const double[:, :, ::1] X, Y, double alpha, double scale=1.0,
                    int link=0, int lik=0, int nthreads=1):
    """As :func:`obs_loglik`, also returning the unscaled alpha-derivative."""
    return _run(X, Y, alpha, scale, link, lik, nthreads, True)
