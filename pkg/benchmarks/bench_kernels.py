"""Time the compiled segment kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--edges 2000] [--per-edge 100] [--repeat 5]

The default problem is the answer layout of one N=200, D=20, alpha=1/2 instance:
2000 edges with 100 answers each.  Both backends are checked for agreement
before timing.
"""

import argparse
import timeit

import numpy as np

from quiterank import kernels


def make_problem(n_edges, per_edge, seed=0):
    r = np.random.default_rng(seed)
    ptr = np.arange(n_edges + 1, dtype=np.int64) * per_edge
    n = n_edges * per_edge
    coef = r.choice([-1.0, 1.0], size=n) * r.uniform(1.0, 20.0, size=n)
    t = r.uniform(-1.0, 1.0, size=n_edges)
    mean = r.uniform(-0.5, 0.5, size=n_edges)
    prec = r.uniform(0.0, 50.0, size=n_edges)
    edge_idx = np.repeat(np.arange(n_edges), per_edge)
    worker_idx = r.integers(0, 200, size=n)
    signs = r.choice([-1.0, 1.0], size=n)
    rho = r.uniform(1.0, 20.0, size=200)
    return dict(ptr=ptr, coef=coef, t=t, mean=mean, prec=prec, edge_idx=edge_idx, worker_idx=worker_idx,
                signs=signs, rho=rho)


def calls(backend, p, model):
    n_edges = p["t"].size
    return {
        "seg_loglik": lambda: backend.seg_loglik(p["ptr"], p["coef"], p["t"], model),
        "seg_derivs": lambda: backend.seg_derivs(p["ptr"], p["coef"], p["t"], model),
        "seg_fisher": lambda: backend.seg_fisher(p["ptr"], p["coef"], p["t"], model),
        "seg_map": lambda: backend.seg_map(p["ptr"], p["coef"], p["mean"], p["prec"], -1.0, 1.0, model,
                                           1e-10, 200, None),
        "answer_gradients": lambda: backend.answer_gradients(p["edge_idx"], p["worker_idx"], p["signs"], p["rho"],
                                                             p["t"], model, n_edges, p["rho"].size),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--edges", type=int, default=2000)
    parser.add_argument("--per-edge", type=int, default=100)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    if kernels.COMPILED is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    p = make_problem(args.edges, args.per_edge)
    print(f"{args.edges} segments x {args.per_edge} records, best of {args.repeat}")
    print(f"{'kernel':<18}{'model':<11}{'python ms':>11}{'compiled ms':>13}{'speedup':>9}")
    for model, label in ((0, "btl"), (1, "thurstone")):
        py, cy = calls(kernels.PYTHON, p, model), calls(kernels.COMPILED, p, model)
        for name in py:
            a, b = py[name](), cy[name]()
            for x, y in zip(np.atleast_1d(a) if not isinstance(a, tuple) else a,
                            np.atleast_1d(b) if not isinstance(b, tuple) else b):
                np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-12)
            t_py = min(timeit.repeat(py[name], number=1, repeat=args.repeat)) * 1e3
            t_cy = min(timeit.repeat(cy[name], number=1, repeat=args.repeat)) * 1e3
            print(f"{name:<18}{label:<11}{t_py:>11.2f}{t_cy:>13.2f}{t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
