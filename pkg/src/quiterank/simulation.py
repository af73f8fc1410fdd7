"""Synthetic ground truth and random worker answers."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError
from .graph import Assignment, ComparisonGraph, distances_from_qualities
from .models import Prior, WorkerModel


@dataclass(frozen=True, eq=False)
class GroundTruth:
    q: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        if not np.all(np.isfinite(q)):
            raise ParameterError("qualities must be finite")
        if not np.all(rho > 0):
            raise ParameterError("reliabilities must be positive")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "rho", rho)

    @property
    def n_objects(self) -> int:
        return self.q.size

    @property
    def n_workers(self) -> int:
        return self.rho.size


def sample_ground_truth(fq: Prior, frho: Prior, n_objects: int, n_workers: int,
                        rng: np.random.Generator) -> GroundTruth:
    return GroundTruth(fq.sample(rng, n_objects), frho.sample(rng, n_workers))


@dataclass(frozen=True, eq=False)
class Segments:
    """Records grouped contiguously by owner (edge or worker).

    ``order`` permutes the answer records into owner order and ``ptr`` holds
    the CSR-style segment boundaries.
    """

    order: np.ndarray
    ptr: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.ptr)


def _segments(owner: np.ndarray, n_owners: int) -> Segments:
    order = np.argsort(owner, kind="stable")
    ptr = np.zeros(n_owners + 1, dtype=np.int64)
    np.cumsum(np.bincount(owner, minlength=n_owners), out=ptr[1:])
    return Segments(order.astype(np.int64), ptr)


@dataclass(frozen=True, eq=False)
class AnswerSet:
    """Binary answers ``w[r]`` given by worker ``worker_idx[r]`` on edge ``edge_idx[r]``.

    ``w = 0`` means the worker preferred the edge's first object ``i_e``.
    """

    n_edges: int
    n_workers: int
    edge_idx: np.ndarray
    worker_idx: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edge_idx, dtype=np.int64)
        k = np.asarray(self.worker_idx, dtype=np.int64)
        w = np.asarray(self.w, dtype=np.int8)
        if not (e.shape == k.shape == w.shape) or e.ndim != 1:
            raise ParameterError("answer arrays must be 1-D and of equal length")
        if w.size and not np.all((w == 0) | (w == 1)):
            raise ParameterError("answers must be binary")
        if e.size and (e.min() < 0 or e.max() >= self.n_edges or k.min() < 0 or k.max() >= self.n_workers):
            raise ParameterError("answer index out of range")
        for name, arr in (("edge_idx", e), ("worker_idx", k), ("w", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.w.size

    @cached_property
    def signs(self) -> np.ndarray:
        """``1 - 2 w`` as floats."""
        s = 1.0 - 2.0 * self.w
        s.setflags(write=False)
        return s

    @cached_property
    def by_edge(self) -> Segments:
        return _segments(self.edge_idx, self.n_edges)

    @cached_property
    def by_worker(self) -> Segments:
        return _segments(self.worker_idx, self.n_workers)

    def edge_answers(self, e: int) -> tuple[np.ndarray, np.ndarray]:
        """``(workers, answers)`` recorded on edge ``e``."""
        seg = self.by_edge
        rec = seg.order[seg.ptr[e]:seg.ptr[e + 1]]
        return self.worker_idx[rec], self.w[rec]

    def worker_answers(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """``(edges, answers)`` given by worker ``k``."""
        seg = self.by_worker
        rec = seg.order[seg.ptr[k]:seg.ptr[k + 1]]
        return self.edge_idx[rec], self.w[rec]

    def union(self, other: "AnswerSet", edge_offset: int) -> "AnswerSet":
        """Append ``other`` whose edges are numbered after this set's edges."""
        if other.n_workers != self.n_workers:
            raise ParameterError("answer sets refer to different worker pools")
        return AnswerSet(self.n_edges + other.n_edges, self.n_workers,
                         np.concatenate([self.edge_idx, other.edge_idx + edge_offset]),
                         np.concatenate([self.worker_idx, other.worker_idx]),
                         np.concatenate([self.w, other.w]))


def generate_answers(model: WorkerModel, gt: GroundTruth, g: ComparisonGraph,
                     a: Assignment, rng: np.random.Generator) -> AnswerSet:
    """Independent Bernoulli answers with ``P(w = 0) = F(rho_k d_e)``."""
    if gt.n_objects != g.n_objects or a.n_edges != g.n_edges or a.n_workers != gt.n_workers:
        raise ParameterError("ground truth, graph and assignment dimensions disagree")
    d = distances_from_qualities(g, gt.q)
    p0 = model.F(gt.rho[a.worker_idx] * d[a.edge_idx])
    w = (rng.random(a.n_tasks) >= p0).astype(np.int8)
    return AnswerSet(g.n_edges, gt.n_workers, a.edge_idx, a.worker_idx, w)


def check_coverage(answers: AnswerSet) -> None:
    """Raise unless every edge and every worker has at least one answer."""
    if np.any(answers.by_edge.counts == 0):
        raise DataError("some edges have no answers")
    if np.any(answers.by_worker.counts == 0):
        raise DataError("some workers have no answers")


# ---------------------------------------------------------------------------
# text formats (1-based indices)


def write_answers(answers: AnswerSet, path) -> None:
    rows = np.column_stack([answers.edge_idx + 1, answers.worker_idx + 1, answers.w])
    with open(path, "w") as fh:
        fh.write(f"# edges={answers.n_edges} workers={answers.n_workers}\n")
        np.savetxt(fh, rows, fmt="%d")


def read_answers(path, n_edges: int | None = None, n_workers: int | None = None) -> AnswerSet:
    text = Path(path).read_text().splitlines()
    header = {}
    if text and text[0].startswith("#"):
        for tok in text[0][1:].split():
            key, _, val = tok.partition("=")
            header[key] = int(val)
    rows = np.loadtxt(path, dtype=np.int64, comments="#", ndmin=2)
    if rows.size == 0:
        rows = np.zeros((0, 3), dtype=np.int64)
    E = n_edges if n_edges is not None else header.get("edges", int(rows[:, 0].max(initial=0)))
    K = n_workers if n_workers is not None else header.get("workers", int(rows[:, 1].max(initial=0)))
    return AnswerSet(E, K, rows[:, 0] - 1, rows[:, 1] - 1, rows[:, 2])


def write_ground_truth(gt: GroundTruth, qualities_path, reliabilities_path) -> None:
    np.savetxt(qualities_path, np.column_stack([np.arange(1, gt.n_objects + 1), gt.q]),
               fmt=["%d", "%.17g"], header="object quality", comments="")
    np.savetxt(reliabilities_path, np.column_stack([np.arange(1, gt.n_workers + 1), gt.rho]),
               fmt=["%d", "%.17g"], header="worker reliability", comments="")


def read_ground_truth(qualities_path, reliabilities_path) -> GroundTruth:
    q = np.loadtxt(qualities_path, skiprows=1, ndmin=2)
    rho = np.loadtxt(reliabilities_path, skiprows=1, ndmin=2)
    return GroundTruth(q[np.argsort(q[:, 0]), 1], rho[np.argsort(rho[:, 0]), 1])
