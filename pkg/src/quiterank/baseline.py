"""Alternate-gradient (AG) joint maximum-likelihood baseline.

Each iteration takes one gradient step in ``q`` and one in ``rho``, both
evaluated at the previous iterate, and re-centres ``q`` to zero mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericError, ParameterError
from .graph import ComparisonGraph
from .models import Prior, WorkerModel
from .simulation import AnswerSet


@dataclass(frozen=True)
class AgConfig:
    lambda_q: float
    lambda_rho: float
    I_max: int = 1000
    tau: float = 1e-5
    I_rho: tuple[float, float] = (1.0, 20.0)
    #: "mean" steps on the per-answer average loss, "sum" on the raw total
    normalization: str = "mean"

    def __post_init__(self):
        if not (self.lambda_q > 0 and self.lambda_rho > 0):
            raise ParameterError("step sizes must be positive")
        if self.I_max < 1:
            raise ParameterError("I_max must be at least 1")
        if self.tau < 0:
            raise ParameterError("tau must be non-negative")
        if self.normalization not in ("mean", "sum"):
            raise ParameterError("normalization must be 'mean' or 'sum'")

    @classmethod
    def default(cls, n_objects: int, I_rho: tuple[float, float] = (1.0, 20.0), **kw) -> "AgConfig":
        """Step sizes ``N / 5`` for both blocks."""
        return cls(n_objects / 5.0, n_objects / 5.0, I_rho=tuple(I_rho), **kw)


@dataclass(frozen=True, eq=False)
class AgResult:
    q_hat: np.ndarray
    rho_hat: np.ndarray
    iterations: int
    stopped_early: bool


def _check(answers: AnswerSet, g: ComparisonGraph, rho, q):
    rho = np.asarray(rho, dtype=float)
    q = np.asarray(q, dtype=float)
    if answers.n_edges != g.n_edges or rho.shape != (answers.n_workers,) or q.shape != (g.n_objects,):
        raise ParameterError("answers, graph, rho and q dimensions disagree")
    return rho, q


def _edge_to_object(g: ComparisonGraph, g_d: np.ndarray) -> np.ndarray:
    """``Gamma @ g_d``."""
    n = g.n_objects
    return np.bincount(g.heads, weights=g_d, minlength=n) - np.bincount(g.tails, weights=g_d, minlength=n)


def _distance_gradients(answers: AnswerSet, g: ComparisonGraph, rho, q, model: WorkerModel):
    d = q[g.heads] - q[g.tails]
    return kernels.answer_gradients(answers.edge_idx, answers.worker_idx, answers.signs,
                                    np.ascontiguousarray(rho), np.ascontiguousarray(d), model.code,
                                    answers.n_edges, answers.n_workers)


def negative_loglik(answers: AnswerSet, g: ComparisonGraph, rho, q, model: WorkerModel) -> float:
    """``-sum log F((1 - 2w) rho_k (q_i - q_j))`` over all answers."""
    rho, q = _check(answers, g, rho, q)
    if len(answers) == 0:
        return 0.0
    d = q[g.heads] - q[g.tails]
    x = np.ascontiguousarray(answers.signs * rho[answers.worker_idx] * d[answers.edge_idx])
    ptr = np.array([0, x.size], dtype=np.int64)
    return -float(kernels.seg_loglik(ptr, x, np.ones(1), WorkerModel.parse(model).code)[0])


def gradients(answers: AnswerSet, g: ComparisonGraph, rho, q, model: WorkerModel):
    """``(grad_q, grad_rho)`` of :func:`negative_loglik`."""
    rho, q = _check(answers, g, rho, q)
    g_d, g_rho = _distance_gradients(answers, g, rho, q, WorkerModel.parse(model))
    return _edge_to_object(g, g_d), g_rho


def initial_point(fq: Prior, frho: Prior, n_objects: int, n_workers: int, rng: np.random.Generator):
    """``q0`` drawn from ``fq`` and centred; ``rho0`` at the prior mean."""
    q0 = fq.sample(rng, n_objects)
    return np.full(n_workers, float(frho.mean)), q0 - q0.mean()


def run_ag(answers: AnswerSet, g: ComparisonGraph, cfg: AgConfig, init, model: WorkerModel) -> AgResult:
    """Iterate the simultaneous q / rho gradient steps from ``init = (rho0, q0)``."""
    model = WorkerModel.parse(model)
    rho, q = _check(answers, g, *init)
    rho = rho.copy()
    q = q.copy()
    scale = 1.0 / max(len(answers), 1) if cfg.normalization == "mean" else 1.0
    lo, hi = cfg.I_rho
    n = g.n_objects
    stopped = False
    it = 0
    for it in range(1, cfg.I_max + 1):
        g_d, g_rho = _distance_gradients(answers, g, rho, q, model)
        with np.errstate(over="ignore", invalid="ignore"):
            q_new = q - cfg.lambda_q * scale * _edge_to_object(g, g_d)
            q_new -= q_new.mean()
            rho = np.clip(rho - cfg.lambda_rho * scale * g_rho, lo, hi)
        if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(rho))):
            raise NumericError(f"AG diverged at iteration {it}")
        change = np.linalg.norm(q_new - q)
        prev = np.linalg.norm(q)
        q = q_new
        if change < cfg.tau * n * prev:
            stopped = True
            break
    return AgResult(q, rho, it, stopped)
