# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled segment kernels; same contract as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs, sqrt, NAN, INFINITY
from scipy.special.cython_special cimport erfcx, log_ndtr

cnp.import_array()

from ._kernels_py import _start_points

cdef double SQRT2 = sqrt(2.0)
cdef double SQRT_2_OVER_PI = sqrt(2.0 / 3.141592653589793)


cdef inline double _log_f(double x, int model) noexcept nogil:
    if model == 0:
        if x >= 0:
            return -log1p(exp(-x))
        return x - log1p(exp(x))
    return log_ndtr(x)


cdef inline void _dlog_d2log(double x, int model, double* d1, double* d2) noexcept nogil:
    cdef double e, s, m
    if model == 0:
        # s = sigmoid(-x)
        if x >= 0:
            e = exp(-x)
            s = e / (1.0 + e)
        else:
            s = 1.0 / (1.0 + exp(x))
        d1[0] = s
        d2[0] = -s * (1.0 - s)
    else:
        m = SQRT_2_OVER_PI / erfcx(-x / SQRT2)
        d1[0] = m
        d2[0] = -m * (x + m)


cdef inline double _fisher(double x, int model) noexcept nogil:
    cdef double e
    if model == 0:
        e = exp(-fabs(x))
        return e / ((1.0 + e) * (1.0 + e))
    return (SQRT_2_OVER_PI / erfcx(-x / SQRT2)) * (SQRT_2_OVER_PI / erfcx(x / SQRT2))


def seg_loglik(const cnp.int64_t[::1] ptr, const double[::1] coef, const double[::1] t, int model):
    cdef Py_ssize_t n = ptr.shape[0] - 1, i, r
    cdef double[::1] out = np.zeros(n)
    cdef double acc, ti
    with nogil:
        for i in range(n):
            acc = 0.0
            ti = t[i]
            for r in range(ptr[i], ptr[i + 1]):
                acc += _log_f(coef[r] * ti, model)
            out[i] = acc
    return np.asarray(out)


def seg_derivs(const cnp.int64_t[::1] ptr, const double[::1] coef, const double[::1] t, int model):
    cdef Py_ssize_t n = ptr.shape[0] - 1, i, r
    cdef double[::1] g1 = np.zeros(n)
    cdef double[::1] g2 = np.zeros(n)
    cdef double a1, a2, ti, a, d1, d2
    with nogil:
        for i in range(n):
            a1 = 0.0
            a2 = 0.0
            ti = t[i]
            for r in range(ptr[i], ptr[i + 1]):
                a = coef[r]
                _dlog_d2log(a * ti, model, &d1, &d2)
                a1 += a * d1
                a2 += a * a * d2
            g1[i] = a1
            g2[i] = a2
    return np.asarray(g1), np.asarray(g2)


def seg_fisher(const cnp.int64_t[::1] ptr, const double[::1] coef, const double[::1] t, int model):
    cdef Py_ssize_t n = ptr.shape[0] - 1, i, r
    cdef double[::1] out = np.zeros(n)
    cdef double acc, ti, a
    with nogil:
        for i in range(n):
            acc = 0.0
            ti = t[i]
            for r in range(ptr[i], ptr[i + 1]):
                a = coef[r]
                acc += a * a * _fisher(a * ti, model)
            out[i] = acc
    return np.asarray(out)


cdef inline void _grad(const cnp.int64_t[::1] ptr, const double[::1] coef, Py_ssize_t i,
                       double t, double mean, double prec, int model,
                       double* g, double* h) noexcept nogil:
    cdef Py_ssize_t r
    cdef double a, d1, d2, a1 = 0.0, a2 = 0.0
    for r in range(ptr[i], ptr[i + 1]):
        a = coef[r]
        _dlog_d2log(a * t, model, &d1, &d2)
        a1 += a * d1
        a2 += a * a * d2
    g[0] = a1 - prec * (t - mean)
    h[0] = a2 - prec


def seg_map(const cnp.int64_t[::1] ptr, const double[::1] coef, mean, prec,
            double lo, double hi, int model, double tol=1e-10, int maxiter=200, x0=None):
    cdef Py_ssize_t n = ptr.shape[0] - 1, i
    cdef const double[::1] mu = np.ascontiguousarray(np.broadcast_to(np.asarray(mean, dtype=float), (n,)))
    cdef const double[::1] pr = np.ascontiguousarray(np.broadcast_to(np.asarray(prec, dtype=float), (n,)))
    cdef const double[::1] start = np.ascontiguousarray(_start_points(mean, prec, lo, hi, n, x0))
    cdef double[::1] out = np.empty(n)
    cdef double g, h, x, x_new, a, b, ea, eb
    cdef int it
    with nogil:
        for i in range(n):
            # infinite bracket ends mark bounds not yet evaluated
            a = -INFINITY
            b = INFINITY
            x = start[i]
            for it in range(maxiter):
                _grad(ptr, coef, i, x, mu[i], pr[i], model, &g, &h)
                if g > 0:
                    a = x
                elif g < 0:
                    b = x
                else:
                    break
                if a >= hi or b <= lo:
                    break
                ea = a if a > lo else lo
                eb = b if b < hi else hi
                x_new = x - g / h if h < 0 else NAN
                if x_new > eb and b == INFINITY:
                    x_new = hi
                elif x_new < ea and a == -INFINITY:
                    x_new = lo
                elif not (ea <= x_new <= eb):
                    x_new = 0.5 * (ea + eb)
                if fabs(x_new - x) < tol or eb - ea < tol:
                    x = x_new
                    break
                x = x_new
            out[i] = x
    return np.asarray(out)


def answer_gradients(const cnp.int64_t[::1] edge_idx, const cnp.int64_t[::1] worker_idx,
                     const double[::1] signs, const double[::1] rho, const double[::1] d,
                     int model, Py_ssize_t n_edges, Py_ssize_t n_workers):
    cdef Py_ssize_t n = edge_idx.shape[0], r, e, k
    cdef double[::1] g_d = np.zeros(n_edges)
    cdef double[::1] g_rho = np.zeros(n_workers)
    cdef double x, d1, d2, s
    with nogil:
        for r in range(n):
            e = edge_idx[r]
            k = worker_idx[r]
            s = signs[r]
            x = s * rho[k] * d[e]
            if model == 0:
                # only the first derivative is needed here
                d1 = 1.0 / (1.0 + exp(x)) if x < 0 else exp(-x) / (1.0 + exp(-x))
            else:
                _dlog_d2log(x, model, &d1, &d2)
            g_d[e] -= s * rho[k] * d1
            g_rho[k] -= s * d[e] * d1
    return np.asarray(g_d), np.asarray(g_rho)
