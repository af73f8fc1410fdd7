"""Monte Carlo experiment runner: grids, trials, aggregation, CSV and plot output."""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import bcrb
from .baseline import AgConfig, initial_point, run_ag
from .errors import ParameterError, QuiteError
from .estimation import QuiteConfig, run_quite
from .graph import random_regular_graph, regular_assignment
from .metrics import affine_adjusted_mse, calibrate_scale, is_epsilon_quality, ranking_from_qualities
from .models import PlanckTaper, Prior, Uniform, WorkerModel, difference_density, prior_from_record
from .multistage import run_two_stage
from .rng import substream
from .simulation import generate_answers, sample_ground_truth

SCENARIOS = ("mse_vs_N", "perr_vs_N", "perr_vs_degree", "two_stage_compare", "bcrb_only")

RESULT_COLUMNS = ("scenario", "model", "N", "K", "D", "alpha", "epsilon", "estimator", "metric",
                  "value", "stderr", "trials", "seed")

ECHO_HEADER = ("# resolved experiment configuration\n"
               "# mse: mean over objects of (A q_hat + B - q)^2, reference object included;\n"
               "# A calibrated on calibration_trials trials with seeds disjoint from the measured ones\n")

_DEFAULT_ESTIMATORS = {
    "mse_vs_N": ["quite", "bcrb"],
    "perr_vs_N": ["quite", "quite_l1", "ag"],
    "perr_vs_degree": ["quite"],
    "two_stage_compare": ["single_stage", "two_stage"],
    "bcrb_only": ["bcrb"],
}


@dataclass
class ExperimentConfig:
    """Everything that defines an experiment; ``config.echo`` is this, resolved."""

    scenario: str = "mse_vs_N"
    model: str = "btl"
    N_grid: list = field(default_factory=lambda: [40, 70, 100, 140, 200])
    alpha_grid: list = field(default_factory=lambda: [0.5, 1.0])
    D: int = 20
    # perr_vs_degree: budgets C = alpha D and the degree multiples of C
    C_grid: list = field(default_factory=lambda: [5, 10])
    degree_multipliers: list = field(default_factory=lambda: [1, 2, 4])
    # two_stage_compare: stage degrees and the matched single-stage degree
    D1: int = 10
    D2: int = 10
    D_single: int = 20
    fq: dict = field(default_factory=lambda: {"kind": "uniform", "params": {"a": 0.0, "b": 1.0}})
    frho: dict = field(default_factory=lambda: {"kind": "uniform", "params": {"a": 1.0, "b": 20.0}})
    #: taper length as a fraction of the support, used to smooth uniform priors for the bound
    bound_smoothing: float = 0.2
    epsilon: float = 0.06
    I_max: int = 30
    tau: float = 0.0
    prior_mean: str = "delta"
    variance_rule: str = "propagated"
    ag_I_max: int = 1000
    ag_tau: float = 1e-5
    #: AG step size as a multiple of N
    ag_step: float = 0.2
    estimators: list | None = None
    trials: int = 100
    calibration_trials: int = 100
    seed: int = 0
    workers: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ParameterError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        WorkerModel.parse(self.model)
        if not self.N_grid or not self.alpha_grid:
            raise ParameterError("N_grid and alpha_grid must be non-empty")
        if self.trials < 1:
            raise ParameterError("trials must be at least 1")
        if self.estimators is None:
            self.estimators = list(_DEFAULT_ESTIMATORS[self.scenario])
        self.N_grid = [int(n) for n in self.N_grid]
        self.alpha_grid = [float(a) for a in self.alpha_grid]

    # -- persistence -------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(yaml.safe_load(text) or {})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())

    # -- derived -----------------------------------------------------------

    @property
    def worker_model(self) -> WorkerModel:
        return WorkerModel.parse(self.model)

    def priors(self) -> tuple[Prior, Prior]:
        return prior_from_record(self.fq), prior_from_record(self.frho)

    def bound_priors(self) -> tuple[Prior, Prior]:
        """Priors used for the bound: uniform ones replaced by their Planck-taper smoothing."""
        def smooth(p):
            return PlanckTaper.smoothing(p.a, p.b, self.bound_smoothing) if isinstance(p, Uniform) else p
        fq, frho = self.priors()
        return smooth(fq), smooth(frho)

    def quite_config(self) -> QuiteConfig:
        fq, frho = self.priors()
        return QuiteConfig(self.worker_model, fq, frho, I_max=self.I_max, tau=self.tau,
                           prior_mean=self.prior_mean, variance_rule=self.variance_rule)


@dataclass(frozen=True)
class GridPoint:
    N: int
    K: int
    D: int
    alpha: float
    index: int

    @property
    def M(self) -> int:
        m = self.alpha * self.K
        if abs(m - round(m)) > 1e-9:
            raise ParameterError(f"alpha K = {m} is not an integer")
        return int(round(m))


def grid_points(cfg: ExperimentConfig) -> list[GridPoint]:
    pts = []
    if cfg.scenario == "perr_vs_degree":
        for N in cfg.N_grid:
            for C in cfg.C_grid:
                for mult in cfg.degree_multipliers:
                    D = int(round(C * mult))
                    pts.append(GridPoint(N, N, D, C / D, len(pts)))
    else:
        D = cfg.D_single if cfg.scenario == "two_stage_compare" else cfg.D
        for N in cfg.N_grid:
            for a in cfg.alpha_grid:
                pts.append(GridPoint(N, N, D, a, len(pts)))
    return pts


# ---------------------------------------------------------------------------
# one trial


def _quality_estimates(cfg: ExperimentConfig, pt: GridPoint, trial: int, stream: str) -> dict[str, np.ndarray]:
    """Quality estimates of every requested estimator on one simulated instance."""
    model = cfg.worker_model
    fq, frho = cfg.priors()
    key = (pt.index, trial)
    gt = sample_ground_truth(fq, frho, pt.N, pt.K, substream(cfg.seed, stream + ":truth", *key))
    out = {"_truth": gt.q}
    needs_single = any(e in cfg.estimators for e in ("quite", "quite_l1", "ag", "single_stage", "bcrb"))
    if needs_single:
        g = random_regular_graph(pt.N, pt.D, substream(cfg.seed, stream + ":graph", *key))
        a = regular_assignment(g, pt.K, pt.M, substream(cfg.seed, stream + ":assignment", *key))
        if "bcrb" in cfg.estimators:
            out["_graph"], out["_assignment"] = g, a
        if any(e in cfg.estimators for e in ("quite", "quite_l1", "ag", "single_stage")):
            w = generate_answers(model, gt, g, a, substream(cfg.seed, stream + ":answers", *key))
            if any(e in cfg.estimators for e in ("quite", "quite_l1", "single_stage")):
                res = run_quite(w, g, a, cfg.quite_config(), substream(cfg.seed, stream + ":quite", *key))
                out["quite"] = out["single_stage"] = res.final.q_hat
                out["quite_l1"] = res.first.q_hat
            if "ag" in cfg.estimators:
                init = initial_point(fq, frho, pt.N, pt.K, substream(cfg.seed, stream + ":ag", *key))
                ag_cfg = AgConfig(cfg.ag_step * pt.N, cfg.ag_step * pt.N, I_max=cfg.ag_I_max, tau=cfg.ag_tau,
                                  I_rho=frho.support)
                q = run_ag(w, g, ag_cfg, init, model).q_hat
                # express relative to the reference object like the LS estimates
                out["ag"] = q - q[-1]
    if "two_stage" in cfg.estimators:
        res = run_two_stage(gt, cfg.quite_config(), cfg.D1, cfg.D2, pt.M, cfg.seed, pt.index, trial,
                            stream_prefix=stream)
        out["two_stage"] = res.final.q_hat
        out["_two_stage_evaluations"] = res.evaluations
    return out


def _bound_value(cfg: ExperimentConfig, g, a) -> float:
    fq_b, frho_b = cfg.bound_priors()
    comp = bcrb.bim_components(cfg.worker_model, fq_b, frho_b, a, fd=difference_density(fq_b))
    objects, _ = bcrb.quality_mse_bound(comp, g)
    return float(objects.mean())


def calibration_task(args):
    cfg, pt, trial = args
    est = _quality_estimates(cfg, pt, trial, "calibration")
    return {k: v for k, v in est.items() if not k.startswith("_") and k != "bcrb"}, est["_truth"]


def measurement_task(args):
    """Metric values of one trial: ``{(estimator, metric): value}``."""
    cfg, pt, trial, scales = args
    est = _quality_estimates(cfg, pt, trial, "trial")
    q_true = est["_truth"]
    out = {}
    for name in cfg.estimators:
        if name == "bcrb":
            out[("bcrb", "mse")] = _bound_value(cfg, est["_graph"], est["_assignment"])
            continue
        q_hat = est[name]
        perm = ranking_from_qualities(q_hat)
        out[(name, "perr")] = 0.0 if is_epsilon_quality(perm, q_true, cfg.epsilon) else 1.0
        if name in scales:
            out[(name, "mse")] = affine_adjusted_mse(q_hat, q_true, scales[name])
    if "_two_stage_evaluations" in est:
        out[("two_stage", "evaluations")] = float(est["_two_stage_evaluations"])
    return out


# ---------------------------------------------------------------------------
# the runner


@dataclass
class ResultRow:
    scenario: str
    model: str
    N: int
    K: int
    D: int
    alpha: float
    epsilon: float
    estimator: str
    metric: str
    value: float
    stderr: float
    trials: int
    seed: int

    def as_list(self) -> list:
        return [getattr(self, c) for c in RESULT_COLUMNS]


@dataclass
class ResultTable:
    config: ExperimentConfig
    rows: list[ResultRow] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def select(self, **kw) -> list[ResultRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]

    def value(self, **kw) -> ResultRow:
        rows = self.select(**kw)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {kw}")
        return rows[0]


class _Accumulator:
    def __init__(self):
        self.n = 0
        self.s = 0.0
        self.ss = 0.0

    def add(self, v: float):
        self.n += 1
        self.s += v
        self.ss += v * v

    @property
    def mean(self) -> float:
        return self.s / self.n

    @property
    def stderr(self) -> float:
        if self.n < 2:
            return 0.0
        var = max(self.ss - self.n * self.mean ** 2, 0.0) / (self.n - 1)
        return math.sqrt(var / self.n)


def _map(fn, tasks, workers: int):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves task order, so the reduction below is pool-size independent
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _mse_estimators(cfg: ExperimentConfig) -> list[str]:
    if cfg.scenario in ("perr_vs_N", "perr_vs_degree"):
        return []
    return [e for e in cfg.estimators if e != "bcrb"]


def run_grid_point(cfg: ExperimentConfig, pt: GridPoint) -> list[ResultRow]:
    scales = {}
    mse_names = _mse_estimators(cfg)
    if mse_names and cfg.calibration_trials > 0:
        cal = _map(calibration_task, [(cfg, pt, t) for t in range(cfg.calibration_trials)], cfg.workers)
        for name in mse_names:
            scales[name] = calibrate_scale([(est[name], q) for est, q in cal])
    results = _map(measurement_task, [(cfg, pt, t, scales) for t in range(cfg.trials)], cfg.workers)
    acc: dict[tuple[str, str], _Accumulator] = {}
    for res in results:
        for key in sorted(res):
            acc.setdefault(key, _Accumulator()).add(res[key])
    rows = []
    for (name, metric), a in sorted(acc.items()):
        rows.append(ResultRow(cfg.scenario, cfg.worker_model.value, pt.N, pt.K, pt.D, pt.alpha, cfg.epsilon,
                              name, metric, a.mean, a.stderr, a.n, cfg.seed))
    for name, A in sorted(scales.items()):
        rows.append(ResultRow(cfg.scenario, cfg.worker_model.value, pt.N, pt.K, pt.D, pt.alpha, cfg.epsilon,
                              name, "scale", A, 0.0, cfg.calibration_trials, cfg.seed))
    return rows


def run_experiment(cfg: ExperimentConfig, points: list[GridPoint] | None = None) -> ResultTable:
    """Run every grid point; a failing point is recorded in ``errors`` and skipped."""
    table = ResultTable(cfg)
    for pt in (points if points is not None else grid_points(cfg)):
        try:
            table.rows.extend(run_grid_point(cfg, pt))
        except QuiteError as exc:
            table.errors.append(f"N={pt.N} D={pt.D} alpha={pt.alpha}: {type(exc).__name__}: {exc}")
    return table


# ---------------------------------------------------------------------------
# output


def write_results_csv(table: ResultTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in table.rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.as_list()])


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _plot(table: ResultTable, path) -> bool:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = table.config
    metric = "mse" if cfg.scenario in ("mse_vs_N", "bcrb_only") else "perr"
    rows = [r for r in table.rows if r.metric == metric]
    if not rows:
        return False
    by_degree = cfg.scenario == "perr_vs_degree"
    plt.rcParams["svg.hashsalt"] = "quiterank"
    fig, ax = plt.subplots(figsize=(6, 4.5))
    series: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        group = round(r.alpha * r.D) if by_degree else r.alpha
        series.setdefault((r.estimator, group), []).append(r)
    for (name, group), pts in sorted(series.items()):
        pts.sort(key=lambda r: (r.D if by_degree else r.N))
        x = [r.D if by_degree else r.N for r in pts]
        y = [r.value for r in pts]
        label = f"{name}, {'C' if by_degree else 'alpha'}={group}"
        style = "--" if name == "bcrb" else "-"
        ax.errorbar(x, y, yerr=[r.stderr for r in pts], linestyle=style, marker="o", label=label, capsize=2)
    if metric == "mse":
        ax.set_yscale("log")
    ax.set_xlabel("D" if by_degree else "N")
    ax.set_ylabel("affine-adjusted MSE (mean over objects)" if metric == "mse"
                  else f"P(not eps-quality), eps={cfg.epsilon}")
    ax.set_title(f"{cfg.scenario} ({cfg.model})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return True


def emit_outputs(table: ResultTable, output_dir) -> list[Path]:
    """Write ``results.csv``, ``config.echo`` and (when there is data) ``<scenario>.svg``."""
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = [out / "results.csv", out / "config.echo"]
        write_results_csv(table, written[0])
        written[1].write_text(ECHO_HEADER + table.config.to_yaml())
        if table.errors:
            (out / "errors.txt").write_text("\n".join(table.errors) + "\n")
            written.append(out / "errors.txt")
        svg = out / f"{table.config.scenario}.svg"
        if _plot(table, svg):
            written.append(svg)
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc}") from exc
    return written


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
