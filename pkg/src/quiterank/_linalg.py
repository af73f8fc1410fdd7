"""Cholesky factorization that reports singular blocks as rank errors."""

import numpy as np
from scipy import linalg

from .errors import RankError


def spd_factor(matrix: np.ndarray, message: str):
    """``cho_factor`` of ``matrix``, rejecting pivots at roundoff level."""
    try:
        factor = linalg.cho_factor(matrix, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise RankError(message) from None
    pivots = np.diag(factor[0]) ** 2
    scale = float(np.abs(np.diag(matrix)).max()) if matrix.size else 0.0
    if not np.all(pivots > matrix.shape[0] * np.finfo(float).eps * scale):
        raise RankError(message)
    return factor
