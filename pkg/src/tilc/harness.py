"""Tuning problem, evaluation protocol, optimizer studies and metrics.

Random streams all derive from one root seed through
``np.random.SeedSequence(root, spawn_key=(stream, ...))``:

* ``NOISE``: vehicle sensor noise of evaluation ``n`` in repeat ``r``,
  shared by every method so that methods see the same noise per slot;
* ``OPTIMIZER``: optimizer randomness per (method, repeat);
* ``VRFT``: the single open-loop experiment of a study.
"""
from __future__ import annotations

import csv
import functools
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cbo import Cbo, CboConfig
from .maneuvers import Maneuver, library
from .optim import EvaluationFailed, IterationRecord, Optimizer
from .smgo import Smgo, SmgoConfig
from .space import SearchSpace
from .til import PidGains, SimulationDiverged, TilSetup, TilTrace, TwinRun, run_til, run_twin
from .vrft import ExperimentData, FilterSpec, bo_vrft_cost, collect_open_loop, fit_pid, prbs

SCHEMA_VERSION = 1

NOISE, OPTIMIZER, VRFT = 1, 2, 3

METHODS = ("cbo", "smgo", "vrft", "smgo+vrft-prior", "cbo+vrft-prior", "smgo-vrft-cost")
_METHOD_KEY = {m: i for i, m in enumerate(METHODS)}

EvalRecord = IterationRecord


def default_space() -> SearchSpace:
    return SearchSpace((0.01, 0.05, 0.0), (5.0, 10.0, 0.5), (True, True, False), ("k_p", "T_I", "T_D"))


@dataclass(frozen=True)
class TuningProblem:
    space: SearchSpace = field(default_factory=default_space)
    gamma_u: float = 1e-4
    beta_max: float = math.radians(4.5)
    maneuver: str = "dlc120"
    budget: int = 60
    repeats: int = 10
    setup: TilSetup = TilSetup()
    vrft_f_r: float = 3.5
    vrft_f_w: float = 6.3
    prbs_amplitude: float = math.radians(2.0)
    prbs_period: int = 10
    prbs_order: int = 9
    smgo: SmgoConfig = SmgoConfig()
    cbo: CboConfig = CboConfig()

    def __post_init__(self):
        if self.space.dim != 3:
            raise ValueError("the search space must have three dimensions (k_p, T_I, T_D)")
        if self.space.lower[1] <= 0:
            raise ValueError("T_I lower bound must be positive")
        if self.gamma_u < 0 or self.beta_max <= 0:
            raise ValueError("gamma_u must be >= 0 and beta_max > 0")
        if self.budget < 0 or self.repeats < 1:
            raise ValueError("budget must be >= 0 and repeats >= 1")

    def get_maneuver(self) -> Maneuver:
        lib = library(self.setup.Ts)
        if self.maneuver not in lib:
            raise KeyError(f"unknown maneuver {self.maneuver!r}; choose from {sorted(lib)}")
        return lib[self.maneuver]

    @property
    def filters(self) -> FilterSpec:
        return FilterSpec.default(self.setup.Ts, self.vrft_f_r, self.vrft_f_w)


@dataclass
class MetricsRow:
    rms_r: float  # deg/s
    rms_beta: float  # deg
    rms_sdot: float  # deg/s

    def as_dict(self) -> dict:
        return asdict(self)


def _rms(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x)))


def steer_rate(s: np.ndarray, Ts: float) -> np.ndarray:
    """First differences over Ts; the first sample has zero rate."""
    s = np.asarray(s, dtype=float)
    return np.diff(s, prepend=s[:1]) / Ts


def evaluate_cost(trace: TilTrace, gamma_u: float) -> float:
    y = trace.y_eps
    sdot = steer_rate(trace.s_cmd, trace.Ts)
    return float(np.mean(y * y) + gamma_u * np.mean(sdot * sdot))


def evaluate_constraint(trace: TilTrace, beta_max: float) -> float:
    """beta_max minus the peak measured sideslip."""
    return float(beta_max - np.max(np.abs(trace.beta_meas)))


def metrics(trace: TilTrace) -> MetricsRow:
    deg = math.degrees(1.0)
    return MetricsRow(deg * _rms(trace.twin_r - trace.r), deg * _rms(trace.twin_beta - trace.beta),
                      deg * _rms(steer_rate(trace.s_act, trace.Ts)))


def calibrate_gamma_u(trace: TilTrace) -> float:
    """Steer-rate weight that makes both cost terms equal on ``trace``."""
    sdot = steer_rate(trace.s_cmd, trace.Ts)
    den = float(np.mean(sdot * sdot))
    if den == 0:
        raise ValueError("trace has a constant command; the weight is undetermined")
    return float(np.mean(trace.y_eps ** 2)) / den


def seed_for(root: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(root, spawn_key=tuple(int(k) for k in key))


def rng_for(root: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(seed_for(root, *key))


@functools.lru_cache(maxsize=16)
def twin_run(maneuver_name: str, setup: TilSetup) -> TwinRun:
    """MPC on the twin is independent of the compensator, so it is computed once per setup."""
    return run_twin(library(setup.Ts)[maneuver_name], setup)


@dataclass
class StoredTrace:
    n: int
    beta_meas: np.ndarray
    failed: bool


class Evaluator:
    """theta -> (cost, g_c) through one closed-loop TiL maneuver.

    Each call uses the noise stream of its evaluation index within the
    run, so the same slot sees the same noise for every method.
    """

    def __init__(self, problem: TuningProblem, root_seed: int = 0, repeat: int = 0, cost: str = "f_bo",
                 store_traces: bool = False):
        if cost not in ("f_bo", "vrft"):
            raise ValueError(f"unknown cost {cost!r}")
        self.problem = problem
        self.root_seed = root_seed
        self.repeat = repeat
        self.cost = cost
        self.maneuver = problem.get_maneuver()
        self.twin = twin_run(problem.maneuver, problem.setup)
        self.filters = problem.filters
        self.n = 0
        self.store_traces = store_traces
        self.traces: List[StoredTrace] = []
        self.last_trace: Optional[TilTrace] = None

    def gains(self, theta) -> PidGains:
        kp, ti, td = (float(v) for v in theta)
        return PidGains(kp, ti, td)

    def simulate(self, theta, n: int) -> TilTrace:
        rng = rng_for(self.root_seed, NOISE, self.repeat, n)
        return run_til(self.maneuver, self.problem.setup, self.gains(theta), rng, self.twin)

    def __call__(self, theta) -> Tuple[float, float]:
        n = self.n
        self.n += 1
        try:
            trace = self.simulate(theta, n)
        except SimulationDiverged as exc:
            if self.store_traces:
                self.traces.append(StoredTrace(n, np.full(len(self.maneuver), np.nan), True))
            raise EvaluationFailed(str(exc)) from exc
        self.last_trace = trace
        if self.store_traces:
            self.traces.append(StoredTrace(n, trace.beta_meas.copy(), False))
        g = evaluate_constraint(trace, self.problem.beta_max)
        if self.cost == "vrft":
            return bo_vrft_cost(trace, self.filters), g
        return evaluate_cost(trace, self.problem.gamma_u), g


def make_evaluator(problem: TuningProblem, root_seed: int = 0, repeat: int = 0, cost: str = "f_bo",
                   store_traces: bool = False) -> Evaluator:
    return Evaluator(problem, root_seed, repeat, cost, store_traces)


@dataclass
class VrftDesign:
    gains: PidGains
    data: ExperimentData
    trace: TilTrace


def vrft_design(problem: TuningProblem, root_seed: int = 0) -> VrftDesign:
    """One open-loop PRBS experiment on the vehicle, then the least-squares PID."""
    man = problem.get_maneuver()
    rng = rng_for(root_seed, VRFT)
    ex = prbs(len(man), problem.prbs_amplitude, problem.prbs_period, rng, problem.prbs_order)
    data, trace = collect_open_loop(man, problem.setup, ex, rng, twin_run(problem.maneuver, problem.setup))
    gains = fit_pid(data, problem.filters)
    theta = np.array(gains.as_tuple())
    if not problem.space.contains(theta):
        raise ValueError(f"VRFT gains {gains.as_tuple()} fall outside the search box")
    return VrftDesign(gains, data, trace)


@dataclass
class TuneResult:
    method: str
    repeat: int
    theta: Optional[Tuple[float, ...]]
    f_best: float
    history: List[IterationRecord]
    vrft_gains: Optional[PidGains] = None
    traces: List[StoredTrace] = field(default_factory=list)

    @property
    def gains(self) -> Optional[PidGains]:
        return None if self.theta is None else PidGains(*self.theta)


def _optimizer(method: str, problem: TuningProblem, evaluator: Evaluator, rng) -> Optimizer:
    if method.startswith("smgo"):
        return Smgo(problem.space, evaluator, problem.smgo, rng)
    return Cbo(problem.space, evaluator, problem.cbo, rng)


def tune(method: str, problem: TuningProblem, root_seed: int = 0, repeat: int = 0, store_traces: bool = False,
         design: Optional[VrftDesign] = None, budget: Optional[int] = None) -> TuneResult:
    """Run one tuning method; ``design`` reuses an existing VRFT experiment."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    budget = problem.budget if budget is None else budget
    cost = "vrft" if method == "smgo-vrft-cost" else "f_bo"
    ev = make_evaluator(problem, root_seed, repeat, cost, store_traces)
    needs_vrft = method == "vrft" or method.endswith("+vrft-prior")
    if needs_vrft and design is None:
        design = vrft_design(problem, root_seed)
    vg = design.gains if needs_vrft else None

    if method == "vrft":
        opt = Smgo(problem.space, ev, problem.smgo, rng_for(root_seed, OPTIMIZER, _METHOD_KEY[method], repeat))
        rec = opt.add_prior(vg.as_tuple())
        return TuneResult(method, repeat, vg.as_tuple(), rec.f, opt.history, vg, ev.traces)

    opt = _optimizer(method, problem, ev, rng_for(root_seed, OPTIMIZER, _METHOD_KEY[method], repeat))
    if vg is not None:
        opt.add_prior(vg.as_tuple())
    opt.run(budget)
    theta, f = opt.best()
    if vg is not None and budget == 0:
        # the prior is returned as designed, even if its evaluation was infeasible
        theta = np.array(vg.as_tuple())
    return TuneResult(method, repeat, None if theta is None else tuple(float(v) for v in theta), f, opt.history, vg,
                      ev.traces)


# ---------------------------------------------------------------------------
# studies


@dataclass
class MethodSummary:
    method: str
    curve: List[float]
    runs_in_curve: List[int]
    infeasible_at: List[int]
    infeasible_cum_mean: List[float]
    select_time_mean: float
    select_time_std: float
    select_time_last_mean: float
    failed_runs: int
    errors: List[str]


@dataclass
class StudyReport:
    methods: List[str]
    repeats: int
    root_seed: int
    results: Dict[str, List[TuneResult]]
    summaries: Dict[str, MethodSummary]

    def write(self, out_dir, store_traces: bool = False) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "curves.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "iteration", "mean_incumbent", "runs", "infeasible", "mean_cum_infeasible"])
            for m in self.methods:
                s = self.summaries[m]
                for k, v in enumerate(s.curve):
                    w.writerow([m, k, repr(v), s.runs_in_curve[k], s.infeasible_at[k], repr(s.infeasible_cum_mean[k])])
        with open(os.path.join(out_dir, "history.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "repeat", "n", "k_p", "T_I", "T_D", "f_bo", "g_c", "feasible", "failed",
                        "incumbent", "kind"])
            for m in self.methods:
                for res in sorted(self.results[m], key=lambda r: r.repeat):
                    for r in res.history:
                        w.writerow([m, res.repeat, r.n, *(repr(v) for v in r.theta), repr(r.f), repr(r.g),
                                    int(r.feasible), int(r.failed), repr(r.incumbent), r.kind])
        summary = {
            "schema_version": SCHEMA_VERSION,
            "root_seed": self.root_seed,
            "repeats": self.repeats,
            "methods": {m: asdict(self.summaries[m]) for m in self.methods},
        }
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, default=_json_default)
        if store_traces:
            tdir = os.path.join(out_dir, "traces")
            os.makedirs(tdir, exist_ok=True)
            for m in self.methods:
                for res in self.results[m]:
                    if not res.traces:
                        continue
                    np.savez(os.path.join(tdir, f"{_slug(m)}_r{res.repeat}.npz"),
                             n=np.array([t.n for t in res.traces]),
                             beta_meas=np.vstack([t.beta_meas for t in res.traces]),
                             failed=np.array([t.failed for t in res.traces]))


def _slug(method: str) -> str:
    return method.replace("+", "_").replace("-", "_")


def _json_default(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def summarize(method: str, runs: List[TuneResult], errors: List[str]) -> MethodSummary:
    length = max((len(r.history) for r in runs), default=0)
    inc = np.full((len(runs), length), np.nan)
    infeas = np.zeros((len(runs), length), dtype=int)
    for i, r in enumerate(runs):
        for k, rec in enumerate(r.history):
            inc[i, k] = rec.incumbent
            infeas[i, k] = 0 if rec.feasible else 1
    curve, counts = [], []
    for k in range(length):
        col = inc[:, k]
        finite = np.isfinite(col)
        counts.append(int(np.sum(finite)))
        # defined only once every run has a feasible incumbent, so the curve stays monotone
        curve.append(float(np.mean(col)) if finite.all() and col.size else math.nan)
    sel = [rec.select_time for r in runs for rec in r.history if rec.kind != "prior"]
    last = [r.history[-1].select_time for r in runs if r.history and r.history[-1].kind != "prior"]
    cum = np.cumsum(infeas, axis=1).mean(axis=0) if runs else np.zeros(0)
    return MethodSummary(method, curve, counts, [int(v) for v in infeas.sum(axis=0)], [float(v) for v in cum],
                         float(np.mean(sel)) if sel else math.nan, float(np.std(sel)) if sel else math.nan,
                         float(np.mean(last)) if last else math.nan, len(errors), errors)


def compare(methods: Sequence[str], problem: TuningProblem, repeats: Optional[int] = None, root_seed: int = 0,
            store_traces: bool = False, budget: Optional[int] = None, progress=None) -> StudyReport:
    """Run every method for ``repeats`` seeded repeats and aggregate per-iteration curves."""
    repeats = problem.repeats if repeats is None else repeats
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    design = None
    if any(m == "vrft" or m.endswith("+vrft-prior") for m in methods):
        design = vrft_design(problem, root_seed)
    results: Dict[str, List[TuneResult]] = {}
    summaries: Dict[str, MethodSummary] = {}
    for m in methods:
        runs, errors = [], []
        for r in range(repeats):
            try:
                runs.append(tune(m, problem, root_seed, r, store_traces, design, budget))
            except Exception as exc:  # reported, excluded from the averages
                errors.append(f"repeat {r}: {type(exc).__name__}: {exc}")
            if progress is not None:
                progress(m, r)
        results[m] = runs
        summaries[m] = summarize(m, runs, errors)
    return StudyReport(methods, repeats, root_seed, results, summaries)


def recount_infeasible(trace_file, beta_max: float) -> np.ndarray:
    """Per-evaluation infeasibility recomputed from stored sideslip traces."""
    with np.load(trace_file) as z:
        beta = z["beta_meas"]
        failed = z["failed"]
    peak = np.max(np.abs(np.nan_to_num(beta, nan=np.inf)), axis=1)
    return (failed | (beta_max - peak < 0)).astype(int)
