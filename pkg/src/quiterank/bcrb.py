"""Bayesian information matrix and the Cramér-Rao lower bounds it implies.

The information matrix of ``(q, rho)`` is block diagonal:

    [ Gamma diag(Delta_q) Gamma^T + beta_q I          0              ]
    [              0                     diag(Delta_rho) + beta_rho I ]

with per-edge and per-worker information

    Delta_q[e]   = |K_e| E[rho^2 I_F(rho d)]
    Delta_rho[k] = |E_k| E[d^2   I_F(rho d)]

where ``I_F(x) = F'(x)^2 / (F(x)(1 - F(x)))`` and the expectation runs
over the reliability prior and the difference density of the quality
prior.  ``beta`` are the prior curvatures ``-E[(log f)'']``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, linalg

from ._linalg import spd_factor
from .errors import NumericError, UnsupportedPriorError
from .graph import Assignment, ComparisonGraph
from .models import Empirical, Gaussian, Prior, TriangularDifference, Uniform, WorkerModel, difference_density

QUAD_EPSREL = 1e-6


def information_integrand(model: WorkerModel, rho, d):
    """``rho^2 F'(rho d)^2 / (F(rho d)(1 - F(rho d)))``."""
    model = WorkerModel.parse(model)
    rho = np.asarray(rho, dtype=float)
    return rho * rho * model.fisher(rho * np.asarray(d, dtype=float))


def _checked_quad(fn, lo, hi, points, epsrel):
    pts = [p for p in (points or []) if lo < p < hi] or None
    val, err = integrate.quad(fn, lo, hi, points=pts, epsabs=0.0, epsrel=epsrel, limit=500)
    if not math.isfinite(val) or err > max(10 * epsrel * abs(val), 1e-300):
        raise NumericError(f"quadrature did not converge (value {val}, error estimate {err})")
    return val


def _expectation(fn, frho: Prior, fd: Prior, epsrel: float) -> float:
    """``E[fn(rho, d)]`` by nested quadrature: outer over rho, inner over d.

    A tabulated difference density is integrated exactly on its own grid
    (it is piecewise linear there); otherwise the inner integral is
    adaptive as well.
    """
    if isinstance(fd, Empirical):
        grid, vals = fd.grid, fd.values

        def inner(r):
            return float(integrate.trapezoid(fn(r, grid) * vals, grid))
    else:
        d_lo, d_hi = fd.support
        d_pts = fd.breakpoints()

        def inner(r):
            return _checked_quad(lambda t: float(fn(r, t) * fd.pdf(t)), d_lo, d_hi, d_pts, epsrel / 10)

    r_lo, r_hi = frho.support
    return _checked_quad(lambda r: inner(r) * float(frho.pdf(r)), r_lo, r_hi, frho.breakpoints(), epsrel)


@lru_cache(maxsize=128)
def expected_information(model: WorkerModel, frho: Prior, fd: Prior, epsrel: float = QUAD_EPSREL):
    """``(E[rho^2 I_F(rho d)], E[d^2 I_F(rho d)])`` under the priors."""
    model = WorkerModel.parse(model)
    eq = _expectation(lambda r, d: r * r * model.fisher(r * d), frho, fd, epsrel)
    er = _expectation(lambda r, d: d * d * model.fisher(r * d), frho, fd, epsrel)
    return eq, er


def delta_entries(model: WorkerModel, frho: Prior, fd: Prior, assignment: Assignment,
                  epsrel: float = QUAD_EPSREL):
    """Diagonal information per edge (``Delta_q``) and per worker (``Delta_rho``)."""
    eq, er = expected_information(WorkerModel.parse(model), frho, fd, epsrel)
    return eq * assignment.edge_counts().astype(float), er * assignment.worker_counts().astype(float)


def prior_curvature(p: Prior, epsrel: float = 1e-9) -> float:
    """``-E[(log f)'']`` for a twice-differentiable prior."""
    if isinstance(p, Gaussian):
        return 1.0 / p.var
    if isinstance(p, Uniform):
        raise UnsupportedPriorError(
            "a uniform prior has no finite curvature; smooth it with PlanckTaper.smoothing(a, b)")
    if isinstance(p, (TriangularDifference, Empirical)):
        raise UnsupportedPriorError(f"{type(p).__name__} prior is not twice differentiable")
    lo, hi = p.support

    def integrand(x):
        logf, _, d2 = p.logpdf_derivs(x)
        f = math.exp(float(logf))
        return 0.0 if f == 0.0 else -float(d2) * f

    cuts = [lo] + [t for t in p.breakpoints() if lo < t < hi] + [hi]
    total = 0.0
    for u, v in zip(cuts[:-1], cuts[1:]):
        val, _ = integrate.quad(integrand, u, v, epsabs=1e-12, epsrel=epsrel, limit=500)
        total += val
    if not math.isfinite(total):
        raise NumericError("prior curvature integral is not finite")
    return total


def prior_curvatures(fq: Prior, frho: Prior) -> tuple[float, float]:
    return prior_curvature(fq), prior_curvature(frho)


@dataclass(frozen=True, eq=False)
class BimComponents:
    delta_q: np.ndarray
    delta_rho: np.ndarray
    beta_q: float
    beta_rho: float

    def upper_block(self, g: ComparisonGraph) -> np.ndarray:
        """``Gamma diag(Delta_q) Gamma^T + beta_q I`` as a dense N x N array."""
        n = g.n_objects
        i, j, w = g.heads, g.tails, self.delta_q
        out = np.zeros((n, n))
        np.add.at(out, (i, i), w)
        np.add.at(out, (j, j), w)
        np.add.at(out, (i, j), -w)
        np.add.at(out, (j, i), -w)
        out[np.diag_indices(n)] += self.beta_q
        return out


def bim_components(model: WorkerModel, fq: Prior, frho: Prior, assignment: Assignment,
                   fd: Prior | None = None) -> BimComponents:
    """All information-matrix ingredients for one design.  ``fd`` defaults to the
    difference density of ``fq``."""
    if fd is None:
        fd = difference_density(fq)
    dq, dr = delta_entries(model, frho, fd, assignment)
    bq, br = prior_curvatures(fq, frho)
    return BimComponents(dq, dr, bq, br)


class BlockBim:
    """Block-diagonal information matrix; the zero blocks are never stored."""

    def __init__(self, components: BimComponents, g: ComparisonGraph):
        self.components = components
        self.graph = g
        self.upper = components.upper_block(g)
        self.lower_diag = components.delta_rho + components.beta_rho

    @property
    def shape(self) -> tuple[int, int]:
        n = self.upper.shape[0] + self.lower_diag.size
        return (n, n)

    def off_diagonal(self) -> np.ndarray:
        return np.zeros((self.upper.shape[0], self.lower_diag.size))

    def lower(self) -> np.ndarray:
        return np.diag(self.lower_diag)

    def to_dense(self) -> np.ndarray:
        n, k = self.upper.shape[0], self.lower_diag.size
        out = np.zeros((n + k, n + k))
        out[:n, :n] = self.upper
        out[n:, n:] = np.diag(self.lower_diag)
        return out


def assemble_bim(components: BimComponents, g: ComparisonGraph) -> BlockBim:
    return BlockBim(components, g)


def quality_mse_bound(components: BimComponents, g: ComparisonGraph):
    """Per-object bounds ``diag(U^-1)`` and per-edge bounds ``diag(Gamma^T U^-1 Gamma)``."""
    upper = components.upper_block(g)
    factor = spd_factor(upper, "information block is not positive definite")
    inv = linalg.cho_solve(factor, np.eye(upper.shape[0]), check_finite=False)
    objects = np.diag(inv).copy()
    i, j = g.heads, g.tails
    edges = inv[i, i] + inv[j, j] - 2.0 * inv[i, j]
    return objects, edges


def reliability_mse_bound(components: BimComponents) -> np.ndarray:
    return 1.0 / (components.delta_rho + components.beta_rho)


def write_bounds_csv(path, object_bounds, edge_bounds, worker_bounds) -> None:
    """One row per bounded parameter: ``class, index, bound`` (1-based indices)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "index", "bound"])
        for name, vals in (("quality", object_bounds), ("distance", edge_bounds), ("reliability", worker_bounds)):
            for idx, v in enumerate(np.asarray(vals, dtype=float), start=1):
                w.writerow([name, idx, repr(float(v))])
