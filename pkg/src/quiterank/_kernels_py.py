"""Pure numpy implementation of the segment kernels.

A "segment" is a contiguous run of answer records owned by one edge or one
worker; ``ptr`` holds the boundaries.  For segment ``i`` with records ``r``
and coefficients ``a_r`` every kernel works with the log-likelihood
``sum_r log F(a_r t_i)``:

* edge MAP:    a_r = (1 - 2 w_r) rho_hat[worker_r],   t = distance
* worker MAP:  a_r = (1 - 2 w_r) d_hat[edge_r],       t = reliability

The compiled module ``_kernels`` exposes the same functions.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _owner(ptr):
    return np.repeat(np.arange(ptr.size - 1), np.diff(ptr))


def _sum(owner, values, n):
    return np.bincount(owner, weights=values, minlength=n)


def _log_f(x, model):
    return special.log_expit(x) if model == 0 else special.log_ndtr(x)


def _dlog_d2log(x, model):
    if model == 0:
        s = special.expit(-x)
        return s, -s * (1.0 - s)
    m = _SQRT_2_OVER_PI / special.erfcx(-x / _SQRT2)
    return m, -m * (x + m)


def _fisher(x, model):
    if model == 0:
        return special.expit(x) * special.expit(-x)
    return (_SQRT_2_OVER_PI / special.erfcx(-x / _SQRT2)) * (_SQRT_2_OVER_PI / special.erfcx(x / _SQRT2))


def seg_loglik(ptr, coef, t, model):
    """``sum_r log F(a_r t_i)`` per segment."""
    n = ptr.size - 1
    owner = _owner(ptr)
    return _sum(owner, _log_f(coef * t[owner], model), n)


def seg_derivs(ptr, coef, t, model):
    """First and second ``t``-derivatives of the segment log-likelihood."""
    n = ptr.size - 1
    owner = _owner(ptr)
    d1, d2 = _dlog_d2log(coef * t[owner], model)
    return _sum(owner, coef * d1, n), _sum(owner, coef * coef * d2, n)


def seg_fisher(ptr, coef, t, model):
    """``sum_r a_r^2 F'(x)^2 / (F(x)(1 - F(x)))`` at ``x = a_r t_i``."""
    n = ptr.size - 1
    owner = _owner(ptr)
    return _sum(owner, coef * coef * _fisher(coef * t[owner], model), n)


def _start_points(mean, prec, lo, hi, n, x0=None):
    """Newton starting points: ``x0`` if given, else the prior mean, else the midpoint."""
    if x0 is not None:
        x = np.broadcast_to(np.asarray(x0, dtype=float), (n,))
    else:
        mean = np.broadcast_to(np.asarray(mean, dtype=float), (n,))
        prec = np.broadcast_to(np.asarray(prec, dtype=float), (n,))
        x = np.where(prec > 0, mean, 0.5 * (lo + hi))
    x = np.where(np.isfinite(x), x, 0.5 * (lo + hi))
    return np.clip(x, lo, hi).astype(float)


def seg_map(ptr, coef, mean, prec, lo, hi, model, tol=1e-10, maxiter=200, x0=None):
    """Maximize ``loglik_i(t) - prec_i (t - mean_i)^2 / 2`` over ``[lo, hi]``.

    The objective is concave; safeguarded Newton on its derivative inside a
    shrinking bracket, run in lockstep over all segments.  A bracket end
    is only evaluated when Newton tries to step past it, which is how a
    maximum on the boundary is detected.  ``prec = 0`` gives a flat prior.
    """
    n = ptr.size - 1
    owner = _owner(ptr)
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (n,))
    prec = np.broadcast_to(np.asarray(prec, dtype=float), (n,))
    lo = float(lo)
    hi = float(hi)

    def grad(t, rec_mask):
        own = owner[rec_mask]
        a = coef[rec_mask]
        d1, d2 = _dlog_d2log(a * t[own], model)
        g = _sum(own, a * d1, n) - prec * (t - mean)
        h = _sum(own, a * a * d2, n) - prec
        return g, h

    x = _start_points(mean, prec, lo, hi, n, x0)
    # infinite bracket ends mark bounds not yet evaluated
    lo_b = np.full(n, -np.inf)
    hi_b = np.full(n, np.inf)
    active = np.ones(n, dtype=bool)
    for _ in range(maxiter):
        if not active.any():
            break
        g, h = grad(x, active[owner])
        lo_b = np.where(active & (g > 0), x, lo_b)
        hi_b = np.where(active & (g < 0), x, hi_b)
        stop = active & ((g == 0) | (lo_b >= hi) | (hi_b <= lo))
        active &= ~stop
        a = np.maximum(lo_b, lo)
        b = np.minimum(hi_b, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = np.where(h < 0, x - g / h, np.nan)
        to_hi = (x_new > b) & np.isinf(hi_b)
        to_lo = (x_new < a) & np.isinf(lo_b)
        inside = (x_new >= a) & (x_new <= b)
        x_new = np.where(to_hi, hi, np.where(to_lo, lo, np.where(inside, x_new, 0.5 * (a + b))))
        done = active & ((np.abs(x_new - x) < tol) | (b - a < tol))
        x = np.where(active, x_new, x)
        active &= ~done
    return x


def answer_gradients(edge_idx, worker_idx, signs, rho, d, model, n_edges, n_workers):
    """Gradients of ``-sum_r log F(x_r)``, ``x_r = s_r rho[k_r] d[e_r]``, w.r.t. ``d`` and ``rho``."""
    rr = rho[worker_idx]
    dd = d[edge_idx]
    d1, _ = _dlog_d2log(signs * rr * dd, model)
    g_d = -np.bincount(edge_idx, weights=signs * rr * d1, minlength=n_edges)
    g_rho = -np.bincount(worker_idx, weights=signs * dd * d1, minlength=n_workers)
    return g_d, g_rho
