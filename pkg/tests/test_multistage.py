import csv

import numpy as np
import pytest
from scipy import optimize

from conftest import MODELS
from quiterank.errors import ParameterError
from quiterank.estimation import QuiteConfig, run_quite
from quiterank.graph import ComparisonGraph, random_regular_graph, regular_assignment
from quiterank.metrics import affine_adjusted_mse, optimal_scale
from quiterank.models import Uniform, WorkerModel
from quiterank.multistage import (
    assign_workers_sorted,
    assignment_mismatch,
    build_second_stage_graph,
    distance_error_proxy,
    dummy_pairs,
    optimal_edge_reliability,
    optimal_scaled_reliability,
    plan_second_stage,
    run_two_stage,
    second_stage_warm_start,
    write_diagnostics_csv,
)
from quiterank.rng import substream
from quiterank.simulation import generate_answers, sample_ground_truth

BTL, THURSTONE = WorkerModel.BTL, WorkerModel.THURSTONE
FQ = Uniform(0.0, 1.0)
FRHO = Uniform(1.0, 20.0)


def pairs(g):
    return {tuple(sorted(e)) for e in g.edges.tolist()}


class TestSecondStageGraph:
    def test_path_along_ranking(self):
        q = np.array([0.3, 0.9, 0.1, 0.5, 0.7])
        g = build_second_stage_graph(q, 2)
        order = [1, 4, 3, 0, 2]
        assert g.n_edges == 4
        assert pairs(g) == {tuple(sorted(p)) for p in zip(order[:-1], order[1:])}

    def test_window_four(self):
        g = build_second_stage_graph(np.array([0.3, 0.9, 0.1, 0.5, 0.7]), 4)
        assert g.n_edges == 7

    def test_rank_window_enumeration(self):
        r = np.random.default_rng(0)
        for _ in range(50):
            n = int(r.integers(6, 30))
            D = 2 * int(r.integers(1, (n - 1) // 2 + 1))
            q = r.permutation(n).astype(float)
            rank = np.empty(n, dtype=int)
            rank[np.argsort(-q)] = np.arange(n)
            expected = {(i, j) for i in range(n) for j in range(i + 1, n) if abs(rank[i] - rank[j]) <= D // 2}
            assert pairs(build_second_stage_graph(q, D)) == expected

    def test_orientation(self):
        q = np.random.default_rng(1).uniform(size=12)
        g = build_second_stage_graph(q, 4)
        assert np.all(q[g.heads] > q[g.tails])

    def test_exclusion(self):
        q = np.array([0.3, 0.9, 0.1, 0.5, 0.7])
        stage1 = ComparisonGraph(5, [(4, 1), (0, 2)])
        g = build_second_stage_graph(q, 2, stage1)
        assert pairs(g) == {(3, 4), (0, 3)}
        assert pairs(build_second_stage_graph(q, 2, [(1, 4)])) == {(3, 4), (0, 3), (0, 2)}

    @pytest.mark.parametrize("D", [0, 3, 5, 6])
    def test_bad_degree(self, D):
        with pytest.raises(ParameterError):
            build_second_stage_graph(np.arange(5.0), D)


def independent_minimizer(model):
    """Dense grid then golden section on ``H(rho) = distance_error_proxy(rho, |d|=1)``."""
    grid = np.linspace(0.2, 6.0, 5801)
    h = [distance_error_proxy(model, x, 1.0) for x in grid]
    i = int(np.argmin(h))
    return optimize.golden(lambda x: distance_error_proxy(model, x, 1.0), brack=(grid[i - 1], grid[i], grid[i + 1]),
                           tol=1e-12)


class TestOptimalReliability:
    def test_btl_constant(self):
        assert optimal_edge_reliability(BTL, 1.0) == pytest.approx(2.399, abs=1e-3)
        assert optimal_edge_reliability(BTL, -0.5) == pytest.approx(4.799, abs=2e-3)
        assert independent_minimizer(BTL) == pytest.approx(optimal_scaled_reliability(BTL), abs=1e-6)

    def test_thurstone_constant(self):
        x = optimal_scaled_reliability(THURSTONE)
        assert independent_minimizer(THURSTONE) == pytest.approx(x, abs=1e-6)
        assert optimal_edge_reliability(THURSTONE, 0.25) == pytest.approx(4 * x)

    @pytest.mark.parametrize("model", MODELS)
    @pytest.mark.parametrize("d", [1.0, 0.3])
    def test_local_minimum(self, model, d):
        rho = optimal_edge_reliability(model, d)
        H = lambda r: distance_error_proxy(model, r, d)
        assert H(rho - 0.01) > H(rho) < H(rho + 0.01)

    def test_zero_distance(self):
        assert optimal_edge_reliability(BTL, 0.0, (1.0, 20.0)) == 20.0

    def test_proxy_scales_with_answers(self):
        assert distance_error_proxy(BTL, 3.0, 0.4, 4) == pytest.approx(distance_error_proxy(BTL, 3.0, 0.4) / 4)


class TestSortedAssignment:
    def test_full_pool(self):
        a = assign_workers_sorted(np.array([3.0, 1.0, 2.0]), np.array([0.1, -0.2, 0.3, 0.05]), 3)
        assert np.all(a.edge_counts() == 3) and np.all(a.worker_counts() == 4)

    def test_small_example(self):
        rho = np.array([1.0, 9.0, 4.0, 7.0])
        d = np.array([0.4, -0.05, 0.3, 0.1])
        a = assign_workers_sorted(rho, d, 2)
        assert set(a.edge_workers(1)) == {1, 3} and set(a.edge_workers(3)) == {1, 3}
        assert set(a.edge_workers(0)) == {0, 2} and set(a.edge_workers(2)) == {0, 2}

    def test_dummy_padding(self):
        rho = np.arange(6.0)
        a = assign_workers_sorted(rho, np.linspace(0.1, 0.5, 5), 2)
        assert dummy_pairs(5, 3) == 1
        assert a.edge_counts().tolist() == [2, 2, 2, 2, 2]
        assert len(a.edge_idx) == 5 * 2

    def test_blocks_are_sorted(self):
        r = np.random.default_rng(2)
        rho = r.uniform(1, 20, size=20)
        d = r.normal(size=37)
        a = assign_workers_sorted(rho, d, 5)
        # edge blocks by |d| ascending, worker blocks by rho descending
        block_of_edge = {}
        for e in range(37):
            ws = a.edge_workers(e)
            block_of_edge[e] = rho[ws].min()
        order = np.argsort(np.abs(d), kind="stable")
        mins = [block_of_edge[e] for e in order]
        assert all(x >= y for x, y in zip(mins[:-1], mins[1:]))
        workers_by_min = {}
        for e in range(37):
            key = tuple(sorted(a.edge_workers(e)))
            workers_by_min[key] = rho[list(key)]
        blocks = sorted(workers_by_min.values(), key=lambda v: -v.max())
        for hi, lo in zip(blocks[:-1], blocks[1:]):
            assert hi.min() >= lo.max()

    def test_beats_random_assignments(self):
        r = np.random.default_rng(3)
        for _ in range(20):
            K, M = 20, 5
            rho = r.uniform(1, 20, size=K)
            d = r.uniform(-0.5, 0.5, size=int(r.integers(20, 60)))
            rho_star = np.array([optimal_edge_reliability(BTL, x) for x in d])
            best = assignment_mismatch(assign_workers_sorted(rho, d, M), rho, rho_star)
            for _ in range(100):
                # same block shapes, random membership
                rand = assign_workers_sorted(r.permutation(K).astype(float), r.permutation(d.size).astype(float), M)
                assert best <= assignment_mismatch(rand, rho, rho_star)

    def test_divisibility(self):
        with pytest.raises(ParameterError):
            assign_workers_sorted(np.ones(5), np.ones(4), 2)


def small_setup(N=40, K=40, seed=0, model=BTL):
    r = np.random.default_rng(seed)
    gt = sample_ground_truth(FQ, FRHO, N, K, r)
    return gt, QuiteConfig(model, FQ, FRHO, I_max=10, tau=1e-5)


class TestPlan:
    def test_plan_and_warm_start(self):
        gt, cfg = small_setup()
        g1 = random_regular_graph(40, 10, np.random.default_rng(1))
        a1 = regular_assignment(g1, 40, 20, np.random.default_rng(1))
        w1 = generate_answers(BTL, gt, g1, a1, np.random.default_rng(1))
        s1 = run_quite(w1, g1, a1, cfg, np.random.default_rng(1)).final
        plan = plan_second_stage(s1, g1, BTL, 10, 20)
        assert not pairs(plan.g2) & pairs(g1)
        assert plan.assignment2.n_workers == 40
        assert np.all(plan.assignment2.edge_counts() == 20)
        assert plan.target_reliabilities.shape == (plan.g2.n_edges,)
        ws = second_stage_warm_start(s1, plan.g2)
        np.testing.assert_array_equal(ws.delta[:g1.n_edges], s1.delta)
        np.testing.assert_array_equal(ws.sigma[:g1.n_edges], s1.sigma)
        np.testing.assert_allclose(ws.delta[g1.n_edges:], s1.q_hat[plan.g2.heads] - s1.q_hat[plan.g2.tails])
        assert np.all(ws.sigma[g1.n_edges:] == np.median(s1.sigma))
        np.testing.assert_array_equal(ws.rho_hat, s1.rho_hat)


class TestRunTwoStage:
    def test_deterministic_and_accounting(self, tmp_path):
        gt, cfg = small_setup()
        r1 = run_two_stage(gt, cfg, 10, 10, 40, 5, 3)
        r2 = run_two_stage(gt, cfg, 10, 10, 40, 5, 3)
        np.testing.assert_array_equal(r1.final.q_hat, r2.final.q_hat)
        np.testing.assert_array_equal(r1.final.rho_hat, r2.final.rho_hat)
        assert r1.graph.n_edges == r1.diagnostics[1].edges
        assert r1.evaluations == r1.diagnostics[1].evaluations
        assert r1.diagnostics[0].evaluations == 40 * 10 // 2 * 40
        # rank-window boundary and excluded stage-1 pairs make stage 2 smaller than a fresh D=10 graph
        g1_pairs = pairs(ComparisonGraph(40, r1.graph.edges[:200]))
        window = pairs(build_second_stage_graph(r1.stage1.final.q_hat, 10))
        assert r1.graph.n_edges == 200 + len(window - g1_pairs)
        assert len(window) == 200 - 15
        assert r1.evaluations == r1.graph.n_edges * 40 <= 40 * 20 // 2 * 40
        assert r1.final.q_hat.shape == (40,) and r1.final.q_hat[-1] == 0.0
        write_diagnostics_csv(r1.diagnostics, tmp_path / "stages.csv")
        with open(tmp_path / "stages.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["stage", "mse", "iterations", "edges", "evaluations"]
        assert len(rows) == 3

    def test_streams(self):
        gt, cfg = small_setup()
        base = run_two_stage(gt, cfg, 10, 10, 40, 5)
        other_index = run_two_stage(gt, cfg, 10, 10, 40, 5, 1)
        prefixed = run_two_stage(gt, cfg, 10, 10, 40, 5, stream_prefix="x")
        assert not np.array_equal(base.final.q_hat, other_index.final.q_hat)
        assert not np.array_equal(base.final.q_hat, prefixed.final.q_hat)

    def test_given_first_stage_design(self):
        gt, cfg = small_setup()
        g1 = random_regular_graph(40, 10, np.random.default_rng(4))
        a1 = regular_assignment(g1, 40, 40, np.random.default_rng(4))
        res = run_two_stage(gt, cfg, 10, 10, 40, 0, g1=g1, a1=a1)
        np.testing.assert_array_equal(res.graph.edges[:g1.n_edges], g1.edges)

    @pytest.mark.slow
    @pytest.mark.parametrize("model", MODELS)
    def test_two_stage_mse_not_worse(self, model):
        cfg = QuiteConfig(model, FQ, FRHO, I_max=50, tau=1e-5)
        single, double = [], []
        for t in range(100):
            gt = sample_ground_truth(FQ, FRHO, 200, 200, substream(7, "truth", t))
            g = random_regular_graph(200, 20, substream(7, "graph", t))
            a = regular_assignment(g, 200, 200, substream(7, "assignment", t))
            w = generate_answers(model, gt, g, a, substream(7, "answers", t))
            q = run_quite(w, g, a, cfg, substream(7, "quite", t)).final.q_hat
            single.append(affine_adjusted_mse(q, gt.q, optimal_scale(q, gt.q)))
            q2 = run_two_stage(gt, cfg, 10, 10, 200, 7, t, stream_prefix="two").final.q_hat
            double.append(affine_adjusted_mse(q2, gt.q, optimal_scale(q2, gt.q)))
        assert np.mean(double) <= np.mean(single)
