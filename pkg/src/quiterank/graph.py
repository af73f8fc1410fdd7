"""Comparison graphs, the signed incidence matrix and worker-to-pair assignments."""

from __future__ import annotations

import collections
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csgraph, csr_matrix

from .errors import ConstructionError, ParameterError

MAX_GRAPH_RETRIES = 1000


@dataclass(frozen=True, eq=False)
class ComparisonGraph:
    """Objects ``0..N-1`` and the evaluated pairs ``(i_e, j_e)`` (0-based).

    Edge ``e`` measures ``d_e = q[i_e] - q[j_e]``.
    """

    n_objects: int
    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = int(self.n_objects)
        if n < 2:
            raise ParameterError("a comparison graph needs at least two objects")
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ParameterError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ParameterError("self-loops are not allowed")
        key = np.sort(edges, axis=1)
        if len(np.unique(key, axis=0)) != len(key):
            raise ParameterError("duplicate object pairs are not allowed")
        edges.setflags(write=False)
        object.__setattr__(self, "n_objects", n)
        object.__setattr__(self, "edges", edges)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def heads(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def tails(self) -> np.ndarray:
        return self.edges[:, 1]

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_objects)

    def pair_set(self) -> set[tuple[int, int]]:
        return {(min(i, j), max(i, j)) for i, j in self.edges.tolist()}

    def is_connected(self) -> bool:
        n = self.n_objects
        adj = csr_matrix((np.ones(self.n_edges), (self.heads, self.tails)), shape=(n, n))
        ncomp, _ = csgraph.connected_components(adj, directed=False)
        return ncomp == 1

    def union(self, other: "ComparisonGraph") -> "ComparisonGraph":
        if other.n_objects != self.n_objects:
            raise ParameterError("graphs have different object counts")
        return ComparisonGraph(self.n_objects, np.vstack([self.edges, other.edges]))


def incidence_matrix(g: ComparisonGraph) -> np.ndarray:
    """N x E matrix with +1 at (i_e, e) and -1 at (j_e, e)."""
    gamma = np.zeros((g.n_objects, g.n_edges))
    cols = np.arange(g.n_edges)
    gamma[g.heads, cols] = 1.0
    gamma[g.tails, cols] = -1.0
    return gamma


def distances_from_qualities(g: ComparisonGraph, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (g.n_objects,):
        raise ParameterError(f"expected {g.n_objects} qualities, got shape {q.shape}")
    return q[g.heads] - q[g.tails]


def _pair_stubs(n: int, d: int, rng: np.random.Generator) -> set[tuple[int, int]] | None:
    # Configuration model: shuffle stubs and pair them; stubs that would form a
    # self-loop or multi-edge are re-paired among themselves.
    edges: set[tuple[int, int]] = set()
    stubs = np.repeat(np.arange(n), d)
    while stubs.size:
        rng.shuffle(stubs)
        leftover: collections.Counter = collections.Counter()
        for s1, s2 in zip(stubs[0::2].tolist(), stubs[1::2].tolist()):
            if s1 > s2:
                s1, s2 = s2, s1
            if s1 != s2 and (s1, s2) not in edges:
                edges.add((s1, s2))
            else:
                leftover[s1] += 1
                leftover[s2] += 1
        if not leftover:
            break
        nodes = sorted(leftover)
        if not any((u, v) not in edges for ii, u in enumerate(nodes) for v in nodes[ii + 1:]):
            return None
        stubs = np.repeat(np.array(nodes), [leftover[u] for u in nodes])
    return edges


def random_regular_graph(n: int, d: int, rng: np.random.Generator) -> ComparisonGraph:
    """Simple, connected, ``d``-regular graph on ``n`` nodes (E = n d / 2)."""
    if d < 1 or d >= n:
        raise ParameterError(f"degree must satisfy 1 <= D < N, got N={n}, D={d}")
    if (n * d) % 2:
        raise ParameterError(f"N*D must be even, got N={n}, D={d}")
    for _ in range(MAX_GRAPH_RETRIES):
        edges = _pair_stubs(n, d, rng)
        if edges is None:
            continue
        g = ComparisonGraph(n, np.array(sorted(edges), dtype=np.int64))
        if g.is_connected():
            return g
    raise ConstructionError(f"no connected {d}-regular graph on {n} nodes after "
                            f"{MAX_GRAPH_RETRIES} attempts")


@dataclass(frozen=True, eq=False)
class Assignment:
    """Which worker evaluates which edge, stored as flat ``(edge, worker)`` task lists."""

    n_edges: int
    n_workers: int
    edge_idx: np.ndarray
    worker_idx: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edge_idx, dtype=np.int64)
        k = np.asarray(self.worker_idx, dtype=np.int64)
        if e.shape != k.shape or e.ndim != 1:
            raise ParameterError("edge and worker index arrays must match")
        if e.size and (e.min() < 0 or e.max() >= self.n_edges or k.min() < 0 or k.max() >= self.n_workers):
            raise ParameterError("task index out of range")
        key = e * self.n_workers + k
        if np.unique(key).size != key.size:
            raise ParameterError("a worker is assigned twice to the same edge")
        e.setflags(write=False)
        k.setflags(write=False)
        object.__setattr__(self, "edge_idx", e)
        object.__setattr__(self, "worker_idx", k)

    @property
    def n_tasks(self) -> int:
        return self.edge_idx.size

    def edge_counts(self) -> np.ndarray:
        """``|K_e|`` for every edge."""
        return np.bincount(self.edge_idx, minlength=self.n_edges)

    def worker_counts(self) -> np.ndarray:
        """``|E_k|`` for every worker."""
        return np.bincount(self.worker_idx, minlength=self.n_workers)

    def edge_workers(self, e: int) -> np.ndarray:
        return np.sort(self.worker_idx[self.edge_idx == e])

    def worker_edges(self, k: int) -> np.ndarray:
        return np.sort(self.edge_idx[self.worker_idx == k])


def regular_assignment(g: ComparisonGraph, K: int, M: int, rng: np.random.Generator) -> Assignment:
    """Every edge gets ``M`` distinct workers and every worker ``E M / K`` edges.

    Circulant schedule over a random worker permutation: edge ``e`` takes the
    permuted workers at positions ``eM, ..., eM + M - 1`` (mod K).
    """
    E = g.n_edges
    if not 1 <= M <= K:
        raise ParameterError(f"need 1 <= M <= K, got M={M}, K={K}")
    if (E * M) % K:
        raise ParameterError(f"E*M = {E * M} is not divisible by K = {K}")
    perm = rng.permutation(K)
    pos = (np.arange(E)[:, None] * M + np.arange(M)[None, :]) % K
    workers = perm[pos]
    return Assignment(E, K, np.repeat(np.arange(E), M), workers.ravel())


# ---------------------------------------------------------------------------
# text formats (1-based indices)


def write_edge_list(g: ComparisonGraph, path) -> None:
    lines = [f"{g.n_objects} {g.n_edges}"]
    lines += [f"{i + 1} {j + 1}" for i, j in g.edges.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path) -> ComparisonGraph:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows:
        raise ParameterError(f"{path}: empty edge list")
    n, e = int(rows[0][0]), int(rows[0][1])
    edges = np.array([[int(a) - 1, int(b) - 1] for a, b in rows[1:]], dtype=np.int64).reshape(-1, 2)
    if len(edges) != e:
        raise ParameterError(f"{path}: header announces {e} edges, found {len(edges)}")
    return ComparisonGraph(n, edges)


def write_assignment(a: Assignment, path) -> None:
    order = np.lexsort((a.worker_idx, a.edge_idx))
    e_sorted, k_sorted = a.edge_idx[order], a.worker_idx[order]
    bounds = np.searchsorted(e_sorted, np.arange(a.n_edges + 1))
    lines = [" ".join(str(k + 1) for k in k_sorted[bounds[e]:bounds[e + 1]].tolist())
             for e in range(a.n_edges)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_assignment(path, n_workers: int | None = None) -> Assignment:
    lines = Path(path).read_text().splitlines()
    edge_idx, worker_idx = [], []
    for e, line in enumerate(lines):
        for tok in line.split():
            edge_idx.append(e)
            worker_idx.append(int(tok) - 1)
    K = n_workers if n_workers is not None else (max(worker_idx) + 1 if worker_idx else 0)
    return Assignment(len(lines), K, np.array(edge_idx, dtype=np.int64),
                      np.array(worker_idx, dtype=np.int64))
