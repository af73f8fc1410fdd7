"""Ranking and estimation-error metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError

SCALE_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class RankingOutcome:
    permutation: np.ndarray
    is_eps_quality: dict[float, bool]


def ranking_from_qualities(q_hat) -> np.ndarray:
    """Object indices from best to worst; ties go to the lower index."""
    q_hat = np.asarray(q_hat, dtype=float)
    if not np.all(np.isfinite(q_hat)):
        raise DataError("qualities must be finite to rank")
    # stable sort on -q keeps the lower index first among equals
    return np.argsort(-q_hat, kind="stable")


def is_epsilon_quality(perm, q_true, eps: float) -> bool:
    """True iff no object ranked above another is worse than it by more than ``eps``.

    A single pass along the ranking keeps the lowest true quality seen so
    far; object ``j`` is a violation when some earlier object has quality
    below ``q_j - eps``.
    """
    if eps < 0:
        raise ParameterError("eps must be non-negative")
    q = np.asarray(q_true, dtype=float)[np.asarray(perm)]
    if q.size < 2:
        return True
    prefix_min = np.minimum.accumulate(q)[:-1]
    return not bool(np.any(prefix_min < q[1:] - eps))


def ranking_outcome(q_hat, q_true, eps_values) -> RankingOutcome:
    perm = ranking_from_qualities(q_hat)
    return RankingOutcome(perm, {float(e): is_epsilon_quality(perm, q_true, e) for e in eps_values})


def affine_adjusted_mse(q_hat, q_true, A: float) -> float:
    """Mean over objects of ``(A q_hat + B - q)^2`` with ``B`` the reference object's true quality."""
    if not A > 0:
        raise ParameterError("scale A must be positive")
    q_hat = np.asarray(q_hat, dtype=float)
    q_true = np.asarray(q_true, dtype=float)
    if q_hat.shape != q_true.shape:
        raise ParameterError("q_hat and q_true differ in length")
    B = q_true[-1]
    return float(np.mean((A * q_hat + B - q_true) ** 2))


def optimal_scale(q_hat, q_true) -> float | None:
    """Least-squares ``A`` for one trial, or None when ``q_hat`` is all zero."""
    q_hat = np.asarray(q_hat, dtype=float)
    q_true = np.asarray(q_true, dtype=float)
    den = float(q_hat @ q_hat)
    if den == 0.0:
        return None
    return float(q_hat @ (q_true - q_true[-1])) / den


def calibrate_scale(trials) -> float:
    """Average of the per-trial MSE-minimizing scales, floored at ``SCALE_FLOOR``."""
    trials = list(trials)
    if not trials:
        raise ParameterError("calibration needs at least one trial")
    scales = []
    for i, (q_hat, q_true) in enumerate(trials):
        a = optimal_scale(q_hat, q_true)
        if a is None:
            warnings.warn(f"calibration trial {i} has all-zero estimates; skipped", RuntimeWarning, stacklevel=2)
            continue
        scales.append(a)
    if not scales:
        raise DataError("every calibration trial was degenerate")
    return max(float(np.mean(scales)), SCALE_FLOOR)
