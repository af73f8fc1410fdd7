import numpy as np
import pytest

from quiterank.graph import random_regular_graph, regular_assignment
from quiterank.models import Uniform, WorkerModel
from quiterank.simulation import generate_answers, sample_ground_truth

MODELS = [WorkerModel.BTL, WorkerModel.THURSTONE]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_instance(N=20, D=6, K=20, M=10, model=WorkerModel.BTL, seed=0, fq=None, frho=None):
    """Ground truth, graph, assignment and answers of one small simulated crowd."""
    fq = fq or Uniform(0.0, 1.0)
    frho = frho or Uniform(1.0, 20.0)
    r = np.random.default_rng(seed)
    gt = sample_ground_truth(fq, frho, N, K, r)
    g = random_regular_graph(N, D, r)
    a = regular_assignment(g, K, M, r)
    w = generate_answers(model, gt, g, a, r)
    return gt, g, a, w


@pytest.fixture
def small_instance():
    return make_instance()
