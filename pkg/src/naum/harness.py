"""Benchmark trials: initializations, stopping protocols, error metrics,
objective-evolution curves and report files.

A trial group shares one problem instance and one starting point per seed;
every configured algorithm is run from that point. Aggregation is a pure
function of the stored traces, so a report written to JSON can be
re-aggregated to the identical result.
"""
from __future__ import annotations

import json
import logging
import math
import os
import re
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .engine import SolveOptions, Trace, TraceRecord
from .errors import InvalidConfig, InvalidData, NaumError, TrialError
from .linalg import as_dense
from .matio import CoordinateMatrix, load_matrix
from .mc import McProblem, run_palm, sample_mask, solve_mc
from .model import derive_params
from .nmf import NmfProblem, run_hals, solve_nmf
from .rng import STREAM_DATA, make_rng, standard_normal

logger = logging.getLogger(__name__)

GRID_POINTS = 200


# ---------------------------------------------------------------------------
# Starting points and synthetic data


def _fro(M):
    if sp.issparse(M):
        return math.sqrt(float(M.multiply(M).sum()))
    return float(np.linalg.norm(M))


def init_nmf(m, n, r, M, seed):
    """Nonnegative start: standard normals with negatives zeroed, each factor
    scaled to Frobenius norm ``sqrt(||M||_F)``."""
    norm_M = _fro(M)
    if norm_M == 0:
        raise InvalidData("||M||_F = 0")
    while True:
        rng = make_rng(seed)
        X = np.maximum(0.0, standard_normal(rng, (m, r)))
        Y = np.maximum(0.0, standard_normal(rng, (n, r)))
        if X.any() and Y.any():
            break
        seed += 1
    s = math.sqrt(norm_M)
    return X * (s / np.linalg.norm(X)), Y * (s / np.linalg.norm(Y))


def init_mc(m, n, r, seed):
    rng = make_rng(seed)
    return standard_normal(rng, (m, r)), standard_normal(rng, (n, r))


def synthetic_nmf(m, n, r, noise=0.0, seed=0):
    """``|N(0,1)|`` planted factors; with ``noise > 0`` a Gaussian perturbation
    of relative Frobenius size ``noise`` is added and the result clipped at 0."""
    rng = make_rng(seed, STREAM_DATA)
    M = np.abs(standard_normal(rng, (m, r))) @ np.abs(standard_normal(rng, (n, r))).T
    if noise > 0:
        E = standard_normal(rng, (m, n))
        M = np.maximum(M + noise * np.linalg.norm(M) / np.linalg.norm(E) * E, 0.0)
    return M


def synthetic_mc(m, n, r, seed=0):
    rng = make_rng(seed, STREAM_DATA)
    return standard_normal(rng, (m, r)) @ standard_normal(rng, (n, r)).T


# ---------------------------------------------------------------------------
# Metrics


def relative_error(X, Y, M):
    """``||X Y^T - M||_F / ||M||_F``; also the recovery error when ``M`` is
    the full ground truth."""
    norm_M = _fro(M)
    if norm_M == 0:
        raise InvalidData("||M||_F = 0")
    return float(np.linalg.norm(np.asarray(X @ Y.T - M)) / norm_M)


def metrics(X, Y, M):
    return {"relerr": relative_error(X, Y, M)}


def normalized_fvals(values):
    """``(F - F_min) / (F_max - F_min)`` over a group; all zeros if the group
    values coincide."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def trace_evolution(objectives, times, f_min, t_grid):
    """``E(t)`` of one trace: the running minimum of
    ``e(k) = (F^k - F_min)/(F^0 - F_min)`` over iterations with ``T(k) <= t``.
    Grid points before ``T(0)`` get NaN."""
    F = np.asarray(objectives, dtype=np.float64)
    T = np.asarray(times, dtype=np.float64)
    t_grid = np.asarray(t_grid, dtype=np.float64)
    denom = F[0] - f_min
    if denom <= 0:
        warnings.warn("initial objective equals F_min; evolution curve is all zeros", RuntimeWarning,
                      stacklevel=2)
        return np.zeros_like(t_grid)
    E = np.minimum.accumulate((F - f_min) / denom)
    idx = np.searchsorted(T, t_grid, side="right") - 1
    out = np.full(t_grid.shape, np.nan)
    ok = idx >= 0
    out[ok] = E[idx[ok]]
    return out


def default_grid(traces, max_time=None, points=GRID_POINTS):
    if max_time is None or not math.isfinite(max_time):
        max_time = max((float(t.times[-1]) for t in traces), default=0.0)
    return np.linspace(0.0, max_time, points)


def evolution_curve(traces: dict, t_grid=None, f_min=None, max_time=None):
    """Mean ``E(t)`` per algorithm. ``traces`` maps an algorithm label to its
    list of traces (one per initialization). ``F_min`` defaults to the
    smallest objective seen in any trace."""
    everything = [t for ts in traces.values() for t in ts]
    if f_min is None:
        f_min = min(float(np.min(t.objectives)) for t in everything)
    if t_grid is None:
        t_grid = default_grid(everything, max_time)
    t_grid = np.asarray(t_grid, dtype=np.float64)
    curves = {}
    for label, ts in traces.items():
        curves[label] = np.mean([trace_evolution(t.objectives, t.times, f_min, t_grid) for t in ts],
                                axis=0)
    return t_grid, curves


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str  # "naum", "hals" or "palm"
    alpha: float | None = None
    scheme_x: str | None = None
    scheme_y: str | None = None
    label: str | None = None

    @property
    def tag(self):
        if self.label:
            return self.label
        if self.name == "naum":
            return f"naum-a{self.alpha:g}"
        return self.name

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(frozen=True)
class TrialConfig:
    kind: str  # "nmf" or "mc"
    rank: int
    algorithms: tuple
    seeds: tuple
    source: dict = field(default_factory=dict)
    eta: float | None = None
    sr: float | None = None
    max_time: float = math.inf
    max_iters: int = 5000
    tol_obj: float = 1e-4
    tol_change: float = 1e-4
    time_mode: bool = False
    output: str | None = None

    def __post_init__(self):
        if self.kind not in ("nmf", "mc"):
            raise InvalidConfig(f"problem kind must be 'nmf' or 'mc', got {self.kind!r}")
        if not self.algorithms:
            raise InvalidConfig("no algorithms configured")
        if not self.seeds:
            raise InvalidConfig("no seeds configured")
        if not (self.tol_obj > 0 and self.tol_change > 0):
            raise InvalidConfig("tolerances must be positive")
        if not self.max_time > 0 or self.max_iters < 0:
            raise InvalidConfig("max_time must be positive and max_iters nonnegative")
        if not isinstance(self.rank, int) or self.rank < 1:
            raise InvalidConfig("rank must be a positive integer")
        if "input" not in self.source and "synthetic" not in self.source:
            raise InvalidConfig("source needs an 'input' path or a 'synthetic' block")
        for a in self.algorithms:
            if a.name == "naum":
                if a.alpha is None:
                    raise InvalidConfig("naum entries need an alpha")
            elif a.name not in ("hals", "palm"):
                raise InvalidConfig(f"unknown algorithm {a.name!r}")
            if (a.name == "hals" and self.kind != "nmf") or (a.name == "palm" and self.kind != "mc"):
                raise InvalidConfig(f"{a.name} does not apply to {self.kind}")
        if self.kind == "mc":
            if self.eta is None or not self.eta > 0:
                raise InvalidConfig("mc needs a positive eta")
            if self.sr is None or not 0 < self.sr <= 1:
                raise InvalidConfig("mc needs a sampling ratio in (0, 1]")
        tags = [a.tag for a in self.algorithms]
        if len(set(tags)) != len(tags):
            raise InvalidConfig("algorithm labels must be unique")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        try:
            problem = dict(d.pop("problem"))
            algs = tuple(AlgorithmSpec(**a) for a in d.pop("algorithms", ()))
            seeds = tuple(int(s) for s in d.pop("seeds", ()))
        except (KeyError, TypeError) as exc:
            raise InvalidConfig(f"malformed config: {exc}") from None
        kind = problem.pop("kind", None)
        rank = problem.pop("rank", None)
        eta = problem.pop("eta", None)
        sr = problem.pop("sr", None)
        known = {f for f in cls.__dataclass_fields__} - {"kind", "rank", "algorithms", "seeds",
                                                          "source", "eta", "sr"}
        if d.get("max_time", 0) is None:
            d["max_time"] = math.inf
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(kind=kind, rank=rank, algorithms=algs, seeds=seeds, source=problem,
                       eta=eta, sr=sr, **d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidConfig(f"{path}: {exc}") from None
        cfg = cls.from_dict(d)
        # relative data paths are resolved against the config file
        if "input" in cfg.source and not os.path.isabs(cfg.source["input"]):
            src = dict(cfg.source)
            src["input"] = os.path.join(os.path.dirname(os.path.abspath(path)), src["input"])
            cfg = cls(**{**cfg.__dict__, "source": src})
        return cfg

    def to_dict(self):
        problem = dict(self.source, kind=self.kind, rank=self.rank)
        if self.kind == "mc":
            problem.update(eta=self.eta, sr=self.sr)
        return {
            "problem": problem,
            "algorithms": [a.to_dict() for a in self.algorithms],
            "seeds": list(self.seeds),
            "max_time": self.max_time if math.isfinite(self.max_time) else None,
            "max_iters": self.max_iters,
            "tol_obj": self.tol_obj,
            "tol_change": self.tol_change,
            "time_mode": self.time_mode,
            "output": self.output,
        }

    def options(self):
        opts = SolveOptions(self.max_iters, self.max_time, self.tol_obj, self.tol_change)
        return opts.time_mode() if self.time_mode else opts


# ---------------------------------------------------------------------------
# Running


@dataclass
class TrialResult:
    algorithm: str
    seed: int
    trace: Trace
    error: float  # relerr for nmf, RecErr for mc
    final_objective: float

    @property
    def iterations(self):
        return self.trace.iterations

    @property
    def seconds(self):
        return float(self.trace.times[-1])


def _load_source(cfg: TrialConfig):
    src = cfg.source
    if "synthetic" in src:
        s = dict(src["synthetic"])
        gen = synthetic_nmf if cfg.kind == "nmf" else synthetic_mc
        try:
            return gen(**s)
        except TypeError as exc:
            raise InvalidConfig(f"bad synthetic block: {exc}") from None
    data = load_matrix(src["input"], src.get("format"))
    if isinstance(data, CoordinateMatrix) and cfg.kind == "nmf":
        return data.to_csr()
    return data


def build_instance(cfg: TrialConfig, seed, data=None):
    """Problem, ground truth and shared starting point for one seed."""
    data = _load_source(cfg) if data is None else data
    r = cfg.rank
    if cfg.kind == "nmf":
        prob = NmfProblem(data, r)
        X0, Y0 = init_nmf(prob.m, prob.n, r, prob.M, seed)
        return prob, prob.M, X0, Y0
    if isinstance(data, CoordinateMatrix):
        # the file already lists the observed entries
        prob = McProblem(data.pattern, data.values, r, cfg.eta)
        truth = data.to_csr()
    else:
        M = as_dense(data, "M")
        prob = McProblem.from_matrix(M, sample_mask(*M.shape, cfg.sr, seed), r, cfg.eta)
        truth = M
    X0, Y0 = init_mc(prob.m, prob.n, r, seed)
    return prob, truth, X0, Y0


def _run_algorithm(alg: AlgorithmSpec, cfg: TrialConfig, prob, X0, Y0):
    opts = cfg.options()
    if alg.name == "hals":
        return run_hals(prob, X0, Y0, opts)
    if alg.name == "palm":
        return run_palm(prob, X0, Y0, opts)
    default = "hier" if cfg.kind == "nmf" else "proxlin"
    params = derive_params(alg.alpha, scheme_x=alg.scheme_x or default,
                           scheme_y=alg.scheme_y or default)
    solver = solve_nmf if cfg.kind == "nmf" else solve_mc
    return solver(prob, params, X0, Y0, opts)


def _observed_error(X, Y, truth):
    if sp.issparse(truth):
        # only the observed entries are known
        C = truth.tocoo()
        diff = np.einsum("ij,ij->i", X[C.row], Y[C.col]) - C.data
        return float(np.linalg.norm(diff) / np.linalg.norm(C.data))
    return relative_error(X, Y, truth)


def run_trial(cfg: TrialConfig, alg_index: int, seed: int, data=None) -> TrialResult:
    alg = cfg.algorithms[alg_index]
    try:
        prob, truth, X0, Y0 = build_instance(cfg, seed, data)
        X, Y, trace = _run_algorithm(alg, cfg, prob, X0, Y0)
        err = _observed_error(X, Y, truth) if cfg.kind == "mc" else relative_error(X, Y, truth)
    except (NaumError, ArithmeticError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, TrialError):
            raise
        raise TrialError(alg.tag, seed, exc) from exc
    return TrialResult(alg.tag, seed, trace, err, trace.final_objective)


def _run_trial_task(args):
    cfg, alg_index, seed = args
    return run_trial(cfg, alg_index, seed)


def run_trials(cfg: TrialConfig, jobs: int = 1) -> "Report":
    tasks = [(cfg, a, s) for s in cfg.seeds for a in range(len(cfg.algorithms))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(_run_trial_task, tasks))
    else:
        data = _load_source(cfg)
        trials = [run_trial(c, a, s, data) for c, a, s in tasks]
    return Report(cfg, trials)


# ---------------------------------------------------------------------------
# Aggregation and output


def aggregate(trials, labels, seeds, max_time=math.inf, points=GRID_POINTS):
    """Per-algorithm means and ``E(t)``; depends on the traces only."""
    by_key = {(t.algorithm, t.seed): t for t in trials}
    norm = {}
    for s in seeds:
        group = [by_key[(a, s)] for a in labels]
        for t, v in zip(group, normalized_fvals([g.final_objective for g in group])):
            norm[(t.algorithm, s)] = float(v)
    traces = {a: [by_key[(a, s)].trace for s in seeds] for a in labels}
    grid = default_grid([t for ts in traces.values() for t in ts], max_time, points)
    grid, curves = evolution_curve(traces, t_grid=grid)
    summary = {}
    for a in labels:
        group = [by_key[(a, s)] for s in seeds]
        summary[a] = {
            "iterations": float(np.mean([g.iterations for g in group])),
            "error": float(np.mean([g.error for g in group])),
            "seconds": float(np.mean([g.seconds for g in group])),
            "objective": float(np.mean([g.final_objective for g in group])),
            "normalized_fval": float(np.mean([norm[(a, s)] for s in seeds])),
        }
    return {
        "summary": summary,
        "normalized_fval": {f"{a}/{s}": v for (a, s), v in norm.items()},
        "evolution": {"t": grid.tolist(), **{a: c.tolist() for a, c in curves.items()}},
    }


class Report:
    def __init__(self, config: TrialConfig, trials):
        self.config = config
        self.trials = list(trials)
        self.aggregates = aggregate(self.trials, [a.tag for a in config.algorithms],
                                    list(config.seeds), config.max_time)

    def without_timing(self):
        trials = [TrialResult(t.algorithm, t.seed, t.trace.without_timing(), t.error,
                              t.final_objective) for t in self.trials]
        return Report(self.config, trials)

    def to_dict(self, timing=True):
        if not timing:
            return self.without_timing().to_dict()
        return {
            "config": self.config.to_dict(),
            "trials": [
                {
                    "algorithm": t.algorithm,
                    "seed": t.seed,
                    "error": t.error,
                    "objective": t.final_objective,
                    "iterations": t.iterations,
                    "seconds": t.seconds,
                    "trace": t.trace.to_dict(),
                }
                for t in self.trials
            ],
            "aggregates": self.aggregates,
        }

    def write(self, path, timing=True):
        """JSON report at ``path`` plus one CSV per trace in ``<stem>_traces/``."""
        path = os.fspath(path)
        stem = os.path.splitext(path)[0]
        tdir = stem + "_traces"
        os.makedirs(tdir, exist_ok=True)
        for t in self.trials:
            name = re.sub(r"[^A-Za-z0-9_.-]", "_", f"{t.algorithm}_seed{t.seed}") + ".csv"
            t.trace.write_csv(os.path.join(tdir, name), timing)
        with open(path, "w") as fh:
            json.dump(self.to_dict(timing), fh, indent=2, allow_nan=False)
            fh.write("\n")


def _num(v):
    return math.nan if v is None else float(v)


def trace_from_dict(d) -> Trace:
    rows = d["rows"]
    tr = Trace(float(rows[0][1]), reason=d.get("reason", ""))
    for row in rows[1:]:
        tr.records.append(TraceRecord(int(row[0]), *map(_num, row[1:5]), int(row[5]),
                                      *map(_num, row[6:])))
    for key in ("descent_violations", "cap_violations", "forced_accepts", "window_increases"):
        setattr(tr, key, int(d.get(key, 0)))
    return tr


def load_report(path) -> Report:
    """Rebuild a report (re-aggregating from the stored traces)."""
    with open(path) as fh:
        d = json.load(fh)
    cfg = TrialConfig.from_dict(d["config"])
    trials = [TrialResult(t["algorithm"], int(t["seed"]), trace_from_dict(t["trace"]),
                          float(t["error"]), float(t["objective"])) for t in d["trials"]]
    return Report(cfg, trials)


__all__ = [
    "init_nmf", "init_mc", "synthetic_nmf", "synthetic_mc", "relative_error", "metrics",
    "normalized_fvals", "trace_evolution", "evolution_curve", "AlgorithmSpec", "TrialConfig",
    "TrialResult", "build_instance", "run_trial", "run_trials", "aggregate", "Report",
    "load_report", "trace_from_dict",
]
