"""Command-line interface: ``quiterank {simulate,estimate,bcrb,experiment,compare}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from . import bcrb
from .baseline import AgConfig, initial_point, run_ag
from .errors import QuiteError
from .estimation import run_quite, write_estimates_csv, write_trace_csv
from .experiments import SCENARIOS, ExperimentConfig, emit_outputs, run_experiment
from .graph import random_regular_graph, read_assignment, read_edge_list, regular_assignment, write_assignment, \
    write_edge_list
from .metrics import affine_adjusted_mse, is_epsilon_quality, optimal_scale, ranking_from_qualities
from .models import WorkerModel, difference_density
from .multistage import run_two_stage, write_diagnostics_csv
from .rng import substream
from .simulation import generate_answers, read_answers, sample_ground_truth, write_answers, write_ground_truth


def _parse_value(text: str):
    return yaml.safe_load(text)


def _load_config(args, **defaults) -> ExperimentConfig:
    data = {}
    if getattr(args, "config", None):
        data = yaml.safe_load(Path(args.config).read_text()) or {}
    data.update(defaults)
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        data[key.strip()] = _parse_value(value)
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "model", None):
        data["model"] = args.model
    return ExperimentConfig.from_dict(data)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _instance_shape(args, cfg: ExperimentConfig):
    N = args.N if args.N is not None else cfg.N_grid[0]
    K = args.K if args.K is not None else N
    D = args.D if args.D is not None else cfg.D
    alpha = args.alpha if args.alpha is not None else cfg.alpha_grid[0]
    M = int(round(alpha * K))
    return N, K, D, M


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    N, K, D, M = _instance_shape(args, cfg)
    fq, frho = cfg.priors()
    gt = sample_ground_truth(fq, frho, N, K, substream(cfg.seed, "truth"))
    g = random_regular_graph(N, D, substream(cfg.seed, "graph"))
    a = regular_assignment(g, K, M, substream(cfg.seed, "assignment"))
    w = generate_answers(cfg.worker_model, gt, g, a, substream(cfg.seed, "answers"))
    out = _out_dir(args)
    write_edge_list(g, out / "graph.txt")
    write_assignment(a, out / "assignment.txt")
    write_answers(w, out / "answers.txt")
    write_ground_truth(gt, out / "truth_qualities.txt", out / "truth_reliabilities.txt")
    print(f"N={N} K={K} D={D} M={M} edges={g.n_edges} answers={len(w)} -> {out}")
    return 0


def cmd_estimate(args) -> int:
    cfg = _load_config(args)
    g = read_edge_list(args.graph)
    w = read_answers(args.answers, n_edges=g.n_edges, n_workers=args.K)
    out = _out_dir(args)
    if args.method == "ag":
        fq, frho = cfg.priors()
        ag_cfg = AgConfig(cfg.ag_step * g.n_objects, cfg.ag_step * g.n_objects, I_max=cfg.ag_I_max,
                          tau=cfg.ag_tau, I_rho=frho.support)
        init = initial_point(fq, frho, g.n_objects, w.n_workers, substream(cfg.seed, "ag"))
        res = run_ag(w, g, ag_cfg, init, cfg.worker_model)
        q_hat, rho_hat, its = res.q_hat, res.rho_hat, res.iterations
    else:
        qcfg = cfg.quite_config()
        res = run_quite(w, g, None, qcfg, substream(cfg.seed, "quite"), keep_trace=True)
        q_hat, rho_hat, its = res.final.q_hat, res.final.rho_hat, res.iterations
        write_trace_csv(res.trace, out / "trace.csv")
    write_estimates_csv(q_hat, rho_hat, out / "qualities.csv", out / "reliabilities.csv")
    print(f"{args.method}: {its} iterations -> {out}")
    return 0


def cmd_bcrb(args) -> int:
    cfg = _load_config(args)
    if args.graph:
        g = read_edge_list(args.graph)
        a = read_assignment(args.assignment, n_workers=args.K)
    else:
        N, K, D, M = _instance_shape(args, cfg)
        g = random_regular_graph(N, D, substream(cfg.seed, "graph"))
        a = regular_assignment(g, K, M, substream(cfg.seed, "assignment"))
    fq, frho = cfg.bound_priors()
    comp = bcrb.bim_components(cfg.worker_model, fq, frho, a, fd=difference_density(fq))
    objects, edges = bcrb.quality_mse_bound(comp, g)
    workers = bcrb.reliability_mse_bound(comp)
    out = _out_dir(args)
    bcrb.write_bounds_csv(out / "bounds.csv", objects, edges, workers)
    print(f"mean quality bound {objects.mean():.6g}, mean reliability bound {workers.mean():.6g} -> {out}")
    return 0


def cmd_experiment(args) -> int:
    overrides = {"scenario": args.scenario} if args.scenario else {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.workers is not None:
        overrides["workers"] = args.workers
    cfg = _load_config(args, **overrides)
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    table = run_experiment(cfg)
    for path in emit_outputs(table, out):
        print(path)
    for err in table.errors:
        print(f"grid point failed: {err}", file=sys.stderr)
    return 1 if table.errors else 0


def cmd_compare(args) -> int:
    """QUITE (first and last iteration), AG and optionally two-stage on one simulated instance."""
    cfg = _load_config(args)
    N, K, D, M = _instance_shape(args, cfg)
    fq, frho = cfg.priors()
    model = cfg.worker_model
    gt = sample_ground_truth(fq, frho, N, K, substream(cfg.seed, "truth"))
    g = random_regular_graph(N, D, substream(cfg.seed, "graph"))
    a = regular_assignment(g, K, M, substream(cfg.seed, "assignment"))
    w = generate_answers(model, gt, g, a, substream(cfg.seed, "answers"))
    res = run_quite(w, g, a, cfg.quite_config(), substream(cfg.seed, "quite"))
    estimates = {"quite": res.final.q_hat, "quite_l1": res.first.q_hat}
    ag_cfg = AgConfig(cfg.ag_step * N, cfg.ag_step * N, I_max=cfg.ag_I_max, tau=cfg.ag_tau, I_rho=frho.support)
    ag = run_ag(w, g, ag_cfg, initial_point(fq, frho, N, K, substream(cfg.seed, "ag")), model)
    estimates["ag"] = ag.q_hat - ag.q_hat[-1]
    out = Path(args.out) if args.out else None
    if args.two_stage:
        two = run_two_stage(gt, cfg.quite_config(), cfg.D1, cfg.D2, M, cfg.seed, stream_prefix="two_stage")
        estimates["two_stage"] = two.final.q_hat
        if out:
            out.mkdir(parents=True, exist_ok=True)
            write_diagnostics_csv(two.diagnostics, out / "stages.csv")
    rows = []
    for name, q_hat in estimates.items():
        A = optimal_scale(q_hat, gt.q)
        mse = affine_adjusted_mse(q_hat, gt.q, max(A, 1e-6)) if A is not None else float("nan")
        ok = is_epsilon_quality(ranking_from_qualities(q_hat), gt.q, cfg.epsilon)
        rows.append((name, mse, ok))
    print(f"{'estimator':<10} {'mse(oracle A)':>14} {'eps-quality':>12}")
    for name, mse, ok in rows:
        print(f"{name:<10} {mse:>14.6g} {str(ok):>12}")
    if out:
        out.mkdir(parents=True, exist_ok=True)
        lines = ["estimator,mse,epsilon_quality"] + [f"{n},{m!r},{int(o)}" for n, m, o in rows]
        (out / "compare.csv").write_text("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="YAML config (same keys as config.echo)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--model", choices=[m.value for m in WorkerModel])
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")


def _shape(p: argparse.ArgumentParser) -> None:
    p.add_argument("--N", type=int, help="objects (default: first of N_grid)")
    p.add_argument("--K", type=int, help="workers (default: N)")
    p.add_argument("--D", type=int, help="graph degree")
    p.add_argument("--alpha", type=float, help="fraction of workers per edge")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quiterank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a ground truth, graph, assignment and answers")
    _common(p)
    _shape(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate qualities and reliabilities from an answers file")
    _common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--answers", required=True)
    p.add_argument("--K", type=int, help="number of workers (default: largest index in the answers)")
    p.add_argument("--method", choices=["quite", "ag"], default="quite")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bcrb", help="Bayesian Cramer-Rao bounds for a design")
    _common(p)
    _shape(p)
    p.add_argument("--graph", help="edge list (otherwise a random regular graph is drawn)")
    p.add_argument("--assignment", help="assignment file (required with --graph)")
    p.set_defaults(func=cmd_bcrb)

    p = sub.add_parser("experiment", help="run a Monte Carlo scenario")
    _common(p, out_required=False)
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int, help="process pool size")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("compare", help="all estimators on one simulated instance")
    _common(p, out_required=False)
    _shape(p)
    p.add_argument("--two-stage", action="store_true", help="also run the two-stage protocol with stage degrees D1, D2")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bcrb" and args.graph and not args.assignment:
        print("error: --graph needs --assignment", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (QuiteError, OSError, yaml.YAMLError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
