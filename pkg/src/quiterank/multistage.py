"""Two-stage QUITE: a rank-neighbourhood second graph and reliability-sorted assignment.

Stage 1 runs QUITE on a random regular graph.  Its ranking decides which
pairs to ask about next (objects close in the estimated ranking), and its
reliability estimates decide who answers them (most reliable workers on
the closest pairs).  Stage 2 re-runs QUITE on all answers, starting from
the stage-1 estimates instead of the INIT step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .errors import ParameterError
from .estimation import EstimateState, QuiteConfig, QuiteResult, WarmStart, run_quite
from .graph import Assignment, ComparisonGraph, distances_from_qualities, random_regular_graph, regular_assignment
from .metrics import affine_adjusted_mse, optimal_scale, ranking_from_qualities
from .models import WorkerModel
from .rng import substream
from .simulation import AnswerSet, GroundTruth, generate_answers


# ---------------------------------------------------------------------------
# second-stage graph


def build_second_stage_graph(q_hat, D: int, stage1_edges=None) -> ComparisonGraph:
    """Link every object to the objects at most ``D/2`` rank positions away.

    Ranks come from sorting ``q_hat`` (best first).  Pairs already in
    ``stage1_edges`` (an edge array, a graph, or a set of pairs) are left
    out.  Each edge is oriented from the better-ranked object, so its
    estimated distance is non-negative.
    """
    q_hat = np.asarray(q_hat, dtype=float)
    n = q_hat.size
    if D < 2 or D % 2:
        raise ParameterError(f"D must be a positive even number, got {D}")
    if D >= n:
        raise ParameterError(f"D must be smaller than N, got D={D}, N={n}")
    if isinstance(stage1_edges, ComparisonGraph):
        excluded = stage1_edges.pair_set()
    elif stage1_edges is None:
        excluded = set()
    else:
        excluded = {(min(i, j), max(i, j)) for i, j in np.asarray(stage1_edges).reshape(-1, 2).tolist()}
    perm = ranking_from_qualities(q_hat).tolist()
    half = D // 2
    edges = []
    for r in range(n):
        for s in range(r + 1, min(n, r + half + 1)):
            i, j = perm[r], perm[s]
            if (min(i, j), max(i, j)) not in excluded:
                edges.append((i, j))
    return ComparisonGraph(n, np.array(edges, dtype=np.int64).reshape(-1, 2))


# ---------------------------------------------------------------------------
# target reliabilities


def _btl_proxy(x):
    # x^2 Var[z] |K_e| / rho-independent factor for the logistic link
    return 2.0 * (math.cosh(x) + 1.0) / (x * x)


def _thurstone_proxy(x):
    p = special.ndtr(x)
    return p * (1.0 - p) / (x * x * math.exp(-x * x) / (2.0 * math.pi))


def distance_error_proxy(model: WorkerModel, rho: float, d: float, n_answers: int = 1) -> float:
    """First-order variance of the plug-in distance estimate from ``n_answers``
    workers of reliability ``rho`` on a pair at distance ``d``."""
    model = WorkerModel.parse(model)
    x = abs(rho * d)
    h = _btl_proxy(x) if model is WorkerModel.BTL else _thurstone_proxy(x)
    return h * d * d / n_answers


@lru_cache(maxsize=2)
def optimal_scaled_reliability(model: WorkerModel) -> float:
    """``x* = rho* |d|`` minimizing the distance-error proxy."""
    model = WorkerModel.parse(model)
    if model is WorkerModel.BTL:
        # stationarity of 2 (cosh x + 1) / x^2:  x sinh x = 2 (cosh x + 1)
        return optimize.brentq(lambda x: x * math.sinh(x) - 2.0 * (math.cosh(x) + 1.0), 1.0, 5.0, xtol=1e-14)
    res = optimize.minimize_scalar(_thurstone_proxy, bounds=(0.1, 6.0), method="bounded",
                                   options={"xatol": 1e-12})
    return float(res.x)


def optimal_edge_reliability(model: WorkerModel, d_hat: float, I_rho: tuple[float, float] = (1.0, 20.0)) -> float:
    """Reliability that minimizes the distance-error proxy for a pair at ``d_hat``.

    A zero distance is the hardest pair, so it maps to the top of ``I_rho``.
    """
    if d_hat == 0:
        return float(I_rho[1])
    return optimal_scaled_reliability(WorkerModel.parse(model)) / abs(float(d_hat))


# ---------------------------------------------------------------------------
# assignment


@dataclass(frozen=True, eq=False)
class StagePlan:
    g2: ComparisonGraph
    assignment2: Assignment
    target_reliabilities: np.ndarray
    n_dummy: int


def assign_workers_sorted(rho_hat, d_hat, M: int) -> Assignment:
    """Most reliable workers on the closest pairs.

    Workers sorted by ``rho_hat`` (descending) form ``K/M`` blocks of ``M``;
    edges sorted by ``|d_hat|`` (ascending) form as many blocks, the last
    one padded with dummy pairs that generate no tasks.  Block ``i`` of
    edges is evaluated by every worker of block ``i``.
    """
    rho_hat = np.asarray(rho_hat, dtype=float)
    d_hat = np.asarray(d_hat, dtype=float)
    K = rho_hat.size
    E = d_hat.size
    if not 1 <= M <= K or K % M:
        raise ParameterError(f"K = {K} must be a multiple of M = {M}")
    n_blocks = K // M
    workers = np.argsort(-rho_hat, kind="stable").reshape(n_blocks, M)
    edges = np.argsort(np.abs(d_hat), kind="stable")
    per_block = -(-E // n_blocks)
    e_idx, k_idx = [], []
    for b in range(n_blocks):
        block = edges[b * per_block:(b + 1) * per_block]
        e_idx.append(np.repeat(block, M))
        k_idx.append(np.tile(workers[b], block.size))
    return Assignment(E, K, np.concatenate(e_idx), np.concatenate(k_idx))


def dummy_pairs(n_edges: int, n_blocks: int) -> int:
    return (-n_edges) % n_blocks


def assignment_mismatch(a: Assignment, rho_hat, rho_star) -> float:
    """``sum_k sum_{e in E_k} |rho_hat_k - rho*_e|``."""
    return float(np.abs(np.asarray(rho_hat)[a.worker_idx] - np.asarray(rho_star)[a.edge_idx]).sum())


def plan_second_stage(stage1: EstimateState, g1: ComparisonGraph, model: WorkerModel, D2: int, M: int,
                      I_rho: tuple[float, float] = (1.0, 20.0)) -> StagePlan:
    g2 = build_second_stage_graph(stage1.q_hat, D2, g1)
    d2 = distances_from_qualities(g2, stage1.q_hat)
    a2 = assign_workers_sorted(stage1.rho_hat, d2, M)
    rho_star = np.array([optimal_edge_reliability(model, d, I_rho) for d in d2])
    return StagePlan(g2, a2, rho_star, dummy_pairs(g2.n_edges, stage1.rho_hat.size // M))


def second_stage_warm_start(stage1: EstimateState, g2: ComparisonGraph) -> WarmStart:
    """Stage-1 per-edge posteriors for old edges; ``N(d_hat, median sigma)`` for new ones."""
    d_new = distances_from_qualities(g2, stage1.q_hat)
    s_new = np.full(g2.n_edges, float(np.median(stage1.sigma)))
    return WarmStart(np.concatenate([stage1.delta, d_new]), np.concatenate([stage1.sigma, s_new]),
                     stage1.rho_hat.copy())


# ---------------------------------------------------------------------------
# the protocol


@dataclass(frozen=True, eq=False)
class StageDiagnostics:
    stage: int
    iterations: int
    edges: int
    evaluations: int
    mse: float


@dataclass(eq=False)
class TwoStageResult:
    final: EstimateState
    stage1: QuiteResult
    stage2: QuiteResult
    plan: StagePlan
    graph: ComparisonGraph
    answers: AnswerSet
    diagnostics: list[StageDiagnostics]

    @property
    def evaluations(self) -> int:
        return len(self.answers)


def _oracle_mse(q_hat, q_true) -> float:
    """Affine-adjusted MSE at the per-instance optimal scale (a diagnostic)."""
    a = optimal_scale(q_hat, q_true)
    return affine_adjusted_mse(q_hat, q_true, max(a, 1e-6)) if a is not None else float("nan")


def run_two_stage(gt: GroundTruth, cfg: QuiteConfig, D1: int, D2: int, M: int, seed: int, *index: int,
                  g1: ComparisonGraph | None = None, a1: Assignment | None = None,
                  stream_prefix: str = "") -> TwoStageResult:
    """Both stages on the same worker pool; random draws come from ``(seed, purpose, *index)``.

    ``stream_prefix`` namespaces the purposes, so that several protocols can
    share a seed without sharing draws.
    """
    model = cfg.model

    def rng(purpose):
        return substream(seed, f"{stream_prefix}:{purpose}" if stream_prefix else purpose, *index)

    N, K = gt.n_objects, gt.n_workers
    if g1 is None:
        g1 = random_regular_graph(N, D1, rng("graph"))
    if a1 is None:
        a1 = regular_assignment(g1, K, M, rng("assignment"))
    w1 = generate_answers(model, gt, g1, a1, rng("answers"))
    s1 = run_quite(w1, g1, a1, cfg, rng("quite"))

    plan = plan_second_stage(s1.final, g1, model, D2, M, cfg.I_rho)
    w2 = generate_answers(model, gt, plan.g2, plan.assignment2, rng("answers2"))
    g = g1.union(plan.g2)
    answers = w1.union(w2, edge_offset=g1.n_edges)
    s2 = run_quite(answers, g, None, cfg, rng("quite2"),
                   warm_start=second_stage_warm_start(s1.final, plan.g2))
    diags = [StageDiagnostics(1, s1.iterations, g1.n_edges, len(w1), _oracle_mse(s1.final.q_hat, gt.q)),
             StageDiagnostics(2, s2.iterations, g.n_edges, len(answers), _oracle_mse(s2.final.q_hat, gt.q))]
    return TwoStageResult(s2.final, s1, s2, plan, g, answers, diags)


def write_diagnostics_csv(diags, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "mse", "iterations", "edges", "evaluations"])
        for d in diags:
            w.writerow([d.stage, repr(d.mse), d.iterations, d.edges, d.evaluations])
