"""Backend selection for the segment kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation.  ``QUITERANK_BACKEND=python`` forces the fallback and
``QUITERANK_BACKEND=compiled`` makes a missing extension an error.
"""

from __future__ import annotations

import os
import types

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_NAMES = ("seg_loglik", "seg_derivs", "seg_fisher", "seg_map", "answer_gradients")


def _namespace(module, name):
    ns = types.SimpleNamespace(name=name)
    for fn in _NAMES:
        setattr(ns, fn, getattr(module, fn))
    return ns


PYTHON = _namespace(_kernels_py, "python")
COMPILED = _namespace(_compiled, "compiled") if _compiled is not None else None


def get_backend(name: str = "auto"):
    if name == "python":
        return PYTHON
    if name == "compiled":
        if COMPILED is None:
            raise ImportError("quiterank._kernels is not built; run `pip install -e .`")
        return COMPILED
    if name == "auto":
        return COMPILED if COMPILED is not None else PYTHON
    raise ValueError(f"unknown kernel backend {name!r}")


_active = get_backend(os.environ.get("QUITERANK_BACKEND", "auto"))


def active():
    return _active


def set_backend(name: str) -> None:
    global _active
    _active = get_backend(name)


def seg_loglik(ptr, coef, t, model):
    return _active.seg_loglik(ptr, coef, t, model)


def seg_derivs(ptr, coef, t, model):
    return _active.seg_derivs(ptr, coef, t, model)


def seg_fisher(ptr, coef, t, model):
    return _active.seg_fisher(ptr, coef, t, model)


def seg_map(ptr, coef, mean, prec, lo, hi, model, tol=1e-10, maxiter=200, x0=None):
    return _active.seg_map(ptr, coef, mean, prec, lo, hi, model, tol, maxiter, x0)


def answer_gradients(edge_idx, worker_idx, signs, rho, d, model, n_edges, n_workers):
    return _active.answer_gradients(edge_idx, worker_idx, signs, rho, d, model, n_edges, n_workers)
