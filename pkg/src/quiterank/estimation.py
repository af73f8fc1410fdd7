"""QUITE: iterative joint estimation of object qualities and worker reliabilities.

Each iteration

1. estimates every edge distance on its own, with a variance
   (first iteration: invert the reliability-averaged link ``G``; later:
   per-edge MAP using the current reliabilities and a Gaussian prior
   centred on the previous estimate),
2. combines them with a weighted least-squares fit on the graph,
3. re-estimates every worker's reliability by MAP against the fitted
   distances.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate, linalg, optimize

from . import kernels
from ._linalg import spd_factor
from .errors import DataError, DomainError, NumericError, ParameterError, RankError
from .graph import Assignment, ComparisonGraph, distances_from_qualities
from .models import Gaussian, Prior, Uniform, WorkerModel, difference_density
from .simulation import AnswerSet, check_coverage

SIGMA_MIN = 1e-8
MAP_TOL = 1e-10
MAP_MAXITER = 200


# ---------------------------------------------------------------------------
# configuration and state


@dataclass(frozen=True)
class QuiteConfig:
    model: WorkerModel
    fq: Prior
    frho: Prior
    fd: Prior | None = None
    I_q: tuple[float, float] | None = None
    I_d: tuple[float, float] | None = None
    I_rho: tuple[float, float] | None = None
    I_max: int = 30
    tau: float = 0.0
    single_iteration: bool = False
    unit_weights: bool = False
    #: "delta" centres the chained edge prior on the previous per-edge MAP
    #: estimate; "d_hat" centres it on the previous least-squares distance.
    prior_mean: str = "delta"
    #: "verbatim" propagates only the answers' noise through the MAP
    #: solution; "propagated" also propagates the prior mean's own variance.
    variance_rule: str = "propagated"
    sigma_min: float = SIGMA_MIN

    def __post_init__(self):
        if self.I_max < 1:
            raise ParameterError("I_max must be at least 1")
        if self.tau < 0:
            raise ParameterError("tau must be non-negative")
        if self.prior_mean not in ("delta", "d_hat"):
            raise ParameterError("prior_mean must be 'delta' or 'd_hat'")
        if self.variance_rule not in ("verbatim", "propagated"):
            raise ParameterError("variance_rule must be 'verbatim' or 'propagated'")
        object.__setattr__(self, "model", WorkerModel.parse(self.model))
        if self.fd is None:
            object.__setattr__(self, "fd", difference_density(self.fq))
        if self.I_q is None:
            object.__setattr__(self, "I_q", tuple(self.fq.support))
        if self.I_d is None:
            lo, hi = self.I_q
            object.__setattr__(self, "I_d", (-(hi - lo), hi - lo))
        if self.I_rho is None:
            object.__setattr__(self, "I_rho", tuple(self.frho.support))


@dataclass(frozen=True, eq=False)
class EstimateState:
    iter: int
    delta: np.ndarray
    sigma: np.ndarray
    q_hat: np.ndarray
    d_hat: np.ndarray
    rho_hat: np.ndarray


@dataclass(frozen=True, eq=False)
class WarmStart:
    """Per-edge priors and reliabilities that replace the INIT step."""

    delta: np.ndarray
    sigma: np.ndarray
    rho_hat: np.ndarray


@dataclass(eq=False)
class QuiteResult:
    final: EstimateState
    trace: list[EstimateState] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def iterations(self) -> int:
        return self.final.iter

    @property
    def first(self) -> EstimateState:
        return self.trace[0]


# ---------------------------------------------------------------------------
# first-iteration distance estimates


def empirical_zero_fraction(answers: AnswerSet, e: int) -> float:
    _, w = answers.edge_answers(e)
    if w.size == 0:
        raise DataError(f"edge {e} has no answers")
    return 1.0 - float(w.mean())


class MixtureLink:
    """``G(delta) = E_rho[F(rho delta)]`` under the reliability prior, with its inverse.

    Inverses are memoized: the first-iteration fractions only take the
    values ``j / |K_e|``, so a shared link object is cheap across trials.
    """

    def __init__(self, frho: Prior, model: WorkerModel, epsabs: float = 1e-10):
        self.frho = frho
        self.model = WorkerModel.parse(model)
        self.epsabs = epsabs
        self._inverse_cache: dict[tuple[float, float, float], float] = {}

    def _quad(self, fn) -> float:
        lo, hi = self.frho.support
        pts = self.frho.breakpoints() or None
        val, err = integrate.quad(fn, lo, hi, points=pts, epsabs=self.epsabs, epsrel=1e-12, limit=200)
        if not math.isfinite(val) or err > 1e3 * self.epsabs:
            raise NumericError(f"quadrature failed (value {val}, error {err})")
        return val

    def G(self, delta: float) -> float:
        if delta == 0.0:
            return 0.5
        if isinstance(self.frho, Uniform) and self.model is WorkerModel.BTL:
            # exact: int sigmoid(r delta) dr = softplus(r delta) / delta
            a, b = self.frho.a, self.frho.b
            if abs(delta) * max(abs(a), abs(b)) < 1e-3:
                # series of the softplus difference; the closed form cancels here
                return 0.5 + delta * (a + b) / 8.0 - delta**3 * (a + b) * (a * a + b * b) / 192.0
            return float((np.logaddexp(0, b * delta) - np.logaddexp(0, a * delta)) / (delta * (b - a)))
        f = self.frho.pdf
        return self._quad(lambda r: float(self.model.F(r * delta)) * float(f(r)))

    def dG(self, delta: float) -> float:
        """``G'(delta) = E_rho[rho F'(rho delta)]``."""
        f = self.frho.pdf
        return self._quad(lambda r: r * float(self.model.dF(r * delta)) * float(f(r)))

    def inverse(self, p: float, I_d: tuple[float, float]) -> float:
        if not 0.0 < p < 1.0:
            raise DomainError(f"G^-1 needs p in (0, 1), got {p}")
        key = (float(p), float(I_d[0]), float(I_d[1]))
        hit = self._inverse_cache.get(key)
        if hit is not None:
            return hit
        lo, hi = I_d
        if p == 0.5 and lo < 0.0 < hi:
            out = 0.0
        elif p >= self.G(hi):
            out = float(hi)
        elif p <= self.G(lo):
            out = float(lo)
        else:
            out = optimize.brentq(lambda t: self.G(t) - p, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps,
                                  maxiter=200)
        self._inverse_cache[key] = out
        return out


@lru_cache(maxsize=64)
def _link(frho: Prior, model: WorkerModel) -> MixtureLink:
    return MixtureLink(frho, model)


def mixture_link(frho: Prior, model: WorkerModel, delta: float) -> float:
    return _link(frho, WorkerModel.parse(model)).G(float(delta))


def mixture_link_inverse(frho: Prior, model: WorkerModel, p: float,
                         I_d: tuple[float, float] | None = None) -> float:
    if I_d is None:
        I_d = (-50.0, 50.0)
    return _link(frho, WorkerModel.parse(model)).inverse(float(p), I_d)


def clamp_fraction(p_hat, counts):
    """Continuity correction: keep ``p_hat`` half a count away from 0 and 1."""
    half = 0.5 / np.asarray(counts, dtype=float)
    return np.minimum(np.maximum(p_hat, half), 1.0 - half)


def initial_edge_estimates(answers: AnswerSet, g: ComparisonGraph, frho: Prior, model: WorkerModel,
                           I_d: tuple[float, float], sigma_min: float = SIGMA_MIN):
    """``delta_e = G^-1(p_e)`` and ``sigma_e = (dG^-1/dp)^2 p_e (1 - p_e) / |K_e|``."""
    if answers.n_edges != g.n_edges:
        raise ParameterError("answers and graph disagree on the number of edges")
    counts = answers.by_edge.counts
    if np.any(counts == 0):
        raise DataError("every edge needs at least one answer")
    zeros = np.bincount(answers.edge_idx, weights=1.0 - answers.w, minlength=answers.n_edges)
    p = clamp_fraction(zeros / counts, counts)
    link = _link(frho, WorkerModel.parse(model))
    delta = np.empty(g.n_edges)
    sigma = np.empty(g.n_edges)
    slope_cache: dict[float, float] = {}
    for e in range(g.n_edges):
        pe = float(p[e])
        d = link.inverse(pe, I_d)
        if d not in slope_cache:
            slope_cache[d] = link.dG(d)
        delta[e] = d
        sigma[e] = pe * (1.0 - pe) / (counts[e] * slope_cache[d] ** 2)
    return delta, np.maximum(sigma, sigma_min)


# ---------------------------------------------------------------------------
# per-edge MAP refinement


def _edge_coefficients(answers: AnswerSet, rho_hat: np.ndarray) -> np.ndarray:
    order = answers.by_edge.order
    return np.ascontiguousarray(answers.signs[order] * rho_hat[answers.worker_idx[order]])


def _worker_coefficients(answers: AnswerSet, d_hat: np.ndarray) -> np.ndarray:
    order = answers.by_worker.order
    return np.ascontiguousarray(answers.signs[order] * d_hat[answers.edge_idx[order]])


def map_edges(answers: AnswerSet, rho_hat: np.ndarray, prior_mean: np.ndarray, prior_var: np.ndarray,
              model: WorkerModel, I_d: tuple[float, float], sigma_min: float = SIGMA_MIN,
              variance_rule: str = "propagated"):
    """MAP distance and its first-order variance for every edge at once."""
    model = WorkerModel.parse(model)
    ptr = answers.by_edge.ptr
    coef = _edge_coefficients(answers, rho_hat)
    prec = 1.0 / np.asarray(prior_var, dtype=float)
    mean = np.asarray(prior_mean, dtype=float)
    d_star = kernels.seg_map(ptr, coef, mean, prec, float(I_d[0]), float(I_d[1]), model.code,
                             MAP_TOL, MAP_MAXITER)
    num = kernels.seg_fisher(ptr, coef, d_star, model.code)
    _, curv = kernels.seg_derivs(ptr, coef, d_star, model.code)
    u = curv - prec
    if variance_rule == "propagated":
        # d*/d(mean) = prec / -u, and the mean carries variance 1 / prec
        num = num + prec
    with np.errstate(divide="ignore", invalid="ignore"):
        var = num / (u * u)
    var = np.where(np.isfinite(var), var, sigma_min)
    return d_star, np.maximum(var, sigma_min)


def _single_segment(workers_or_edges, w, values):
    w = np.asarray(w, dtype=float)
    coef = np.ascontiguousarray((1.0 - 2.0 * w) * np.asarray(values, dtype=float)[np.asarray(workers_or_edges)])
    ptr = np.array([0, coef.size], dtype=np.int64)
    return ptr, coef


def map_edge_distance(answers_e, rho_hat, prior_mean: float, prior_var: float, model: WorkerModel,
                      I_d: tuple[float, float], allow_empty: bool = False) -> float:
    """``argmax_d sum_k log F((1-2w_k) rho_k d) + log N(d; prior_mean, prior_var)`` on ``I_d``.

    ``answers_e`` is a ``(workers, w)`` pair as returned by
    :meth:`AnswerSet.edge_answers`.
    """
    workers, w = answers_e
    if len(w) == 0 and not allow_empty:
        raise DataError("edge has no answers")
    if not prior_var > 0:
        raise DomainError("prior variance must be positive")
    model = WorkerModel.parse(model)
    ptr, coef = _single_segment(workers, w, rho_hat)
    out = kernels.seg_map(ptr, coef, float(prior_mean), 1.0 / prior_var, float(I_d[0]), float(I_d[1]),
                          model.code, MAP_TOL, MAP_MAXITER)
    return float(out[0])


def map_edge_variance(d_star: float, rho_hat, answers_e, prior_mean: float, prior_var: float,
                      model: WorkerModel, sigma_min: float = SIGMA_MIN, variance_rule: str = "verbatim") -> float:
    """First-order variance ``sum_k rho_k^2 F'^2/(F(1-F)) / u(d*)^2`` of the MAP distance.

    ``variance_rule="propagated"`` adds the prior precision to the numerator,
    accounting for the prior mean being itself an estimate (the rule
    :func:`map_edges` uses by default).
    """
    workers, w = answers_e
    model = WorkerModel.parse(model)
    ptr, coef = _single_segment(workers, w, rho_hat)
    t = np.array([float(d_star)])
    num = float(kernels.seg_fisher(ptr, coef, t, model.code)[0])
    if variance_rule == "propagated":
        num += 1.0 / prior_var
    u = float(kernels.seg_derivs(ptr, coef, t, model.code)[1][0]) - 1.0 / prior_var
    if u == 0.0:
        return sigma_min
    return max(num / (u * u), sigma_min)


# ---------------------------------------------------------------------------
# weighted least squares on the graph


def weighted_ls_qualities(g: ComparisonGraph, delta, sigma, unit_weights: bool = False) -> np.ndarray:
    """Minimize ``sum_e w_e (x_i - x_j - delta_e)^2`` with ``x[N-1] = 0``.

    ``w_e = 1 / sigma_e`` (or 1 with ``unit_weights``); solved on the
    reduced weighted Laplacian by Cholesky.
    """
    delta = np.asarray(delta, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if delta.shape != (g.n_edges,) or sigma.shape != (g.n_edges,):
        raise ParameterError("delta and sigma need one entry per edge")
    if not unit_weights and not np.all(sigma > 0):
        raise ParameterError("edge variances must be positive")
    n = g.n_objects
    omega = np.ones(g.n_edges) if unit_weights else 1.0 / sigma
    i, j = g.heads, g.tails
    lap = np.zeros((n, n))
    np.add.at(lap, (i, i), omega)
    np.add.at(lap, (j, j), omega)
    np.add.at(lap, (i, j), -omega)
    np.add.at(lap, (j, i), -omega)
    rhs = np.bincount(i, weights=omega * delta, minlength=n) - np.bincount(j, weights=omega * delta, minlength=n)
    factor = spd_factor(lap[:-1, :-1], "weighted Laplacian is singular; is the graph connected?")
    q = np.zeros(n)
    q[:-1] = linalg.cho_solve(factor, rhs[:-1], check_finite=False)
    if not np.all(np.isfinite(q)):
        raise RankError("least-squares solution is not finite")
    return q


# ---------------------------------------------------------------------------
# reliabilities


def _prior_newton(ptr, coef, prior: Prior, lo: float, hi: float, model: WorkerModel,
                  tol: float = MAP_TOL, maxiter: int = MAP_MAXITER, x0=None) -> np.ndarray:
    """Lockstep safeguarded Newton for ``loglik(t) + log prior(t)`` with a general prior."""
    n = ptr.size - 1
    # open interval: a smooth prior's log-density is -inf on the boundary
    span = hi - lo
    lo_e, hi_e = lo + 1e-9 * span, hi - 1e-9 * span

    def grad(t):
        g1, g2 = kernels.seg_derivs(ptr, coef, t, model.code)
        _, p1, p2 = prior.logpdf_derivs(t)
        return g1 + p1, g2 + p2

    lo_b, hi_b = np.full(n, lo_e), np.full(n, hi_e)
    g_lo, _ = grad(lo_b)
    g_hi, _ = grad(hi_b)
    out = np.where(g_lo <= 0, lo_b, np.where(g_hi >= 0, hi_b, np.nan))
    active = np.isnan(out)
    x = np.full(n, 0.5 * (lo + hi)) if x0 is None else np.clip(np.asarray(x0, dtype=float), lo_e, hi_e)
    for _ in range(maxiter):
        if not active.any():
            break
        g, h = grad(x)
        up = g > 0
        lo_b = np.where(active & up, x, lo_b)
        hi_b = np.where(active & ~up, x, hi_b)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = np.where(h < 0, x - g / h, np.nan)
        x_new = np.where((x_new >= lo_b) & (x_new <= hi_b), x_new, 0.5 * (lo_b + hi_b))
        done = active & ((np.abs(x_new - x) < tol) | (hi_b - lo_b < tol))
        x = np.where(active, x_new, x)
        out = np.where(done, x, out)
        active &= ~done
    return np.where(active, x, out)


def _solve_with_prior(ptr, coef, prior: Prior, I: tuple[float, float], model: WorkerModel,
                      x0=None) -> np.ndarray:
    lo, hi = float(I[0]), float(I[1])
    if isinstance(prior, Uniform):
        return kernels.seg_map(ptr, coef, 0.0, 0.0, lo, hi, model.code, MAP_TOL, MAP_MAXITER, x0)
    if isinstance(prior, Gaussian):
        return kernels.seg_map(ptr, coef, prior.mu, 1.0 / prior.var, lo, hi, model.code, MAP_TOL, MAP_MAXITER, x0)
    return _prior_newton(ptr, coef, prior, lo, hi, model, x0=x0)


def map_workers(answers: AnswerSet, d_hat: np.ndarray, frho: Prior, model: WorkerModel,
                I_rho: tuple[float, float], x0=None) -> np.ndarray:
    """MAP reliability of every worker; ``x0`` warm-starts the search."""
    model = WorkerModel.parse(model)
    coef = _worker_coefficients(answers, d_hat)
    return _solve_with_prior(answers.by_worker.ptr, coef, frho, I_rho, model, x0)


def map_worker_reliability(answers_k, d_hat, frho: Prior, model: WorkerModel,
                           I_rho: tuple[float, float] | None = None) -> float:
    """``argmax_rho sum_e log F((1-2w_e) d_e rho) + log f_rho(rho)`` on ``I_rho``.

    ``answers_k`` is an ``(edges, w)`` pair as returned by
    :meth:`AnswerSet.worker_answers`.
    """
    edges, w = answers_k
    if len(w) == 0:
        raise DataError("worker has no answers")
    model = WorkerModel.parse(model)
    if I_rho is None:
        I_rho = frho.support
    ptr, coef = _single_segment(edges, w, d_hat)
    return float(_solve_with_prior(ptr, coef, frho, I_rho, model)[0])


# ---------------------------------------------------------------------------
# the iteration


def _stop(q_new: np.ndarray, q_old: np.ndarray, tau: float) -> bool:
    return bool(np.linalg.norm(q_new - q_old) < tau * q_new.size * np.linalg.norm(q_old))


def run_quite(answers: AnswerSet, g: ComparisonGraph, assignment: Assignment | None, cfg: QuiteConfig,
              rng: np.random.Generator, warm_start: WarmStart | None = None,
              keep_trace: bool = True) -> QuiteResult:
    """Run QUITE until the normalized quality change drops below ``tau`` or ``I_max``.

    With ``warm_start`` the first iteration skips INIT and refines the given
    per-edge priors with the given reliabilities (second stage of the
    two-stage protocol).
    """
    if answers.n_edges != g.n_edges:
        raise ParameterError("answers and graph disagree on the number of edges")
    if assignment is not None and (assignment.n_edges != g.n_edges or assignment.n_workers != answers.n_workers):
        raise ParameterError("assignment does not match the answers")
    check_coverage(answers)
    model = cfg.model
    q_prev = cfg.fq.sample(rng, g.n_objects)
    trace: list[EstimateState] = []
    delta = sigma = rho_hat = d_hat = None
    state = None
    stopped = False
    I_max = 1 if cfg.single_iteration else cfg.I_max
    for it in range(1, I_max + 1):
        if it == 1 and warm_start is None:
            delta, sigma = initial_edge_estimates(answers, g, cfg.frho, model, cfg.I_d, cfg.sigma_min)
        else:
            if it == 1:
                mean, var, rho_prev = warm_start.delta, warm_start.sigma, warm_start.rho_hat
            else:
                mean = delta if cfg.prior_mean == "delta" else d_hat
                var, rho_prev = sigma, rho_hat
            delta, sigma = map_edges(answers, rho_prev, mean, var, model, cfg.I_d, cfg.sigma_min,
                                     cfg.variance_rule)
        q_hat = weighted_ls_qualities(g, delta, sigma, cfg.unit_weights)
        d_hat = distances_from_qualities(g, q_hat)
        rho_hat = map_workers(answers, d_hat, cfg.frho, model, cfg.I_rho, x0=rho_hat)
        state = EstimateState(it, delta, sigma, q_hat, d_hat, rho_hat)
        if keep_trace:
            trace.append(state)
        if _stop(q_hat, q_prev, cfg.tau):
            stopped = True
            break
        q_prev = q_hat
    if not keep_trace:
        trace = [state]
    return QuiteResult(state, trace, stopped)


def with_overrides(cfg: QuiteConfig, **kw) -> QuiteConfig:
    return replace(cfg, **kw)


# ---------------------------------------------------------------------------
# CSV export (1-based ids)


def write_trace_csv(trace, path) -> None:
    """Long format: ``iter, id, quantity, value`` for every edge, object and worker quantity."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "id", "quantity", "value"])
        for st in trace:
            for name in ("delta", "sigma", "q_hat", "rho_hat"):
                for idx, v in enumerate(getattr(st, name).tolist(), start=1):
                    w.writerow([st.iter, idx, name, repr(v)])


def write_estimates_csv(q_hat, rho_hat, qualities_path, reliabilities_path) -> None:
    """Two files: ``object, quality`` and ``worker, reliability``."""
    for path, header, values in ((qualities_path, ("object", "quality"), q_hat),
                                 (reliabilities_path, ("worker", "reliability"), rho_hat)):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for idx, v in enumerate(np.asarray(values, dtype=float).tolist(), start=1):
                w.writerow([idx, repr(v)])
