import math

import numpy as np
import pytest

from quiterank.errors import DataError, ParameterError
from quiterank.graph import ComparisonGraph, Assignment, random_regular_graph, regular_assignment
from quiterank.models import Uniform, WorkerModel
from quiterank.rng import substream
from quiterank.simulation import (AnswerSet, GroundTruth, check_coverage, generate_answers, read_answers,
                                  read_ground_truth, sample_ground_truth, write_answers, write_ground_truth)

from conftest import MODELS, make_instance


def _single_edge(n_answers, q=(0.3, 0.0)):
    g = ComparisonGraph(2, [[0, 1]])
    a = Assignment(1, n_answers, np.zeros(n_answers, dtype=np.int64), np.arange(n_answers))
    return g, a, np.asarray(q, dtype=float)


class TestGroundTruth:
    def test_supports(self, rng):
        gt = sample_ground_truth(Uniform(0, 1), Uniform(1, 20), 200, 200, rng)
        assert gt.q.min() >= 0 and gt.q.max() <= 1
        assert gt.rho.min() >= 1 and gt.rho.max() <= 20

    def test_no_ties(self, rng):
        gt = sample_ground_truth(Uniform(0, 1), Uniform(1, 20), 10**6, 1, rng)
        assert np.unique(gt.q).size == gt.q.size

    def test_deterministic(self):
        a = sample_ground_truth(Uniform(0, 1), Uniform(1, 20), 30, 30, substream(1, "truth"))
        b = sample_ground_truth(Uniform(0, 1), Uniform(1, 20), 30, 30, substream(1, "truth"))
        np.testing.assert_array_equal(a.q, b.q)
        np.testing.assert_array_equal(a.rho, b.rho)

    def test_validation(self):
        with pytest.raises(ParameterError):
            GroundTruth(np.zeros(3), np.array([1.0, 0.0]))
        with pytest.raises(ParameterError):
            GroundTruth(np.array([np.nan]), np.ones(1))


class TestGenerateAnswers:
    def test_zero_distance_is_a_coin(self, rng):
        n = 10**5
        g, a, _ = _single_edge(n)
        gt = GroundTruth(np.zeros(2), np.full(n, 5.0))
        w = generate_answers(WorkerModel.BTL, gt, g, a, rng)
        assert abs(np.mean(w.w == 0) - 0.5) < 0.01

    def test_btl_marginal(self, rng):
        n = 10**5
        g, a, q = _single_edge(n)
        w = generate_answers(WorkerModel.BTL, GroundTruth(q, np.full(n, 5.0)), g, a, rng)
        target = math.exp(1.5) / (1 + math.exp(1.5))
        assert abs(np.mean(w.w == 0) - target) < 0.01

    @pytest.mark.parametrize("model", MODELS)
    def test_marginals_within_three_se(self, model, rng):
        n = 10**5
        g, a, q = _single_edge(n, (0.1, 0.0))
        w = generate_answers(model, GroundTruth(q, np.full(n, 4.0)), g, a, rng)
        p0 = float(model.F(0.4))
        se = math.sqrt(p0 * (1 - p0) / n)
        assert abs(np.mean(w.w == 0) - p0) < 3 * se
        assert abs(np.mean(w.w == 1) - (1 - p0)) < 3 * se

    def test_reliability_monotone(self, rng):
        n = 20000
        g, a, q = _single_edge(n)
        rates = [np.mean(generate_answers(WorkerModel.BTL, GroundTruth(q, np.full(n, r)), g, a, rng).w == 0)
                 for r in (1.0, 5.0, 20.0)]
        assert rates[0] < rates[1] < rates[2]

    def test_workers_independent(self, rng):
        # two workers on the same edge, many replications
        reps = 20000
        g = ComparisonGraph(2, [[0, 1]])
        a = Assignment(1, 2, np.array([0, 0]), np.array([0, 1]))
        gt = GroundTruth(np.array([0.1, 0.0]), np.array([3.0, 3.0]))
        w = np.array([generate_answers(WorkerModel.THURSTONE, gt, g, a, rng).w for _ in range(reps)], float)
        cov = np.cov(w.T)[0, 1]
        assert abs(cov) < 4 * 0.25 / math.sqrt(reps)

    def test_domain_matches_assignment(self, small_instance):
        gt, g, a, w = small_instance
        assert len(w) == a.n_tasks
        assert {(e, k) for e, k in zip(w.edge_idx, w.worker_idx)} == {(e, k) for e, k in zip(a.edge_idx, a.worker_idx)}
        assert set(np.unique(w.w)) <= {0, 1}

    def test_dimension_mismatch(self, rng):
        gt, g, a, _ = make_instance()
        with pytest.raises(ParameterError):
            generate_answers(WorkerModel.BTL, GroundTruth(gt.q[:-1], gt.rho), g, a, rng)

    def test_deterministic(self):
        _, _, _, w1 = make_instance(seed=4)
        _, _, _, w2 = make_instance(seed=4)
        np.testing.assert_array_equal(w1.w, w2.w)


class TestAnswerSet:
    def test_segments(self, small_instance):
        _, g, a, w = small_instance
        np.testing.assert_array_equal(w.by_edge.counts, a.edge_counts())
        np.testing.assert_array_equal(w.by_worker.counts, a.worker_counts())
        workers, answers = w.edge_answers(3)
        np.testing.assert_array_equal(np.sort(workers), a.edge_workers(3))
        np.testing.assert_array_equal(w.signs, 1 - 2 * w.w)

    def test_union(self, small_instance):
        _, g, a, w = small_instance
        u = w.union(w, edge_offset=g.n_edges)
        assert u.n_edges == 2 * g.n_edges and len(u) == 2 * len(w)
        np.testing.assert_array_equal(u.edge_idx[len(w):], w.edge_idx + g.n_edges)

    def test_coverage(self):
        w = AnswerSet(2, 1, np.array([0]), np.array([0]), np.array([1]))
        with pytest.raises(DataError):
            check_coverage(w)

    def test_non_binary(self):
        with pytest.raises(ParameterError):
            AnswerSet(1, 1, np.array([0]), np.array([0]), np.array([2]))


class TestTextFormats:
    def test_answers_round_trip(self, tmp_path, small_instance):
        _, _, _, w = small_instance
        write_answers(w, tmp_path / "w.txt")
        first = (tmp_path / "w.txt").read_text().splitlines()[1].split()
        assert len(first) == 3 and int(first[0]) >= 1 and int(first[1]) >= 1
        r = read_answers(tmp_path / "w.txt")
        assert (r.n_edges, r.n_workers) == (w.n_edges, w.n_workers)
        np.testing.assert_array_equal(r.w, w.w)
        np.testing.assert_array_equal(r.edge_idx, w.edge_idx)

    def test_ground_truth_round_trip(self, tmp_path, small_instance):
        gt = small_instance[0]
        write_ground_truth(gt, tmp_path / "q.txt", tmp_path / "r.txt")
        back = read_ground_truth(tmp_path / "q.txt", tmp_path / "r.txt")
        np.testing.assert_array_equal(back.q, gt.q)
        np.testing.assert_array_equal(back.rho, gt.rho)
