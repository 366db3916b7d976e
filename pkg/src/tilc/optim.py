"""Bookkeeping shared by the black-box optimizers.

Both optimizers minimize f(theta) subject to g(theta) >= 0 over a box,
working in unit-cube coordinates. An evaluation that raises
:class:`EvaluationFailed` is stored as infeasible with a penalty cost.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .space import SearchSpace

Evaluator = Callable[[np.ndarray], Tuple[float, float]]

PENALTY_FACTOR = 10.0


class EvaluationFailed(RuntimeError):
    pass


@dataclass
class IterationRecord:
    n: int
    theta: Tuple[float, ...]
    f: float
    g: float
    feasible: bool
    failed: bool
    incumbent: float
    select_time: float
    eval_time: float
    kind: str


LOG_COLUMNS = ("n", "theta", "f_bo", "g_c", "feasible", "failed", "incumbent", "select_time", "eval_time", "kind")


def write_log(records: Sequence[IterationRecord], path, names: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", *names, "f_bo", "g_c", "feasible", "failed", "incumbent", "select_time", "eval_time", "kind"])
        for r in records:
            w.writerow([r.n, *(repr(float(v)) for v in r.theta), repr(r.f), repr(r.g), int(r.feasible),
                        int(r.failed), repr(r.incumbent), repr(r.select_time), repr(r.eval_time), r.kind])


class Dataset:
    """Samples in unit coordinates with raw outcomes; failures carry NaN until penalized."""

    def __init__(self, dim: int):
        self.dim = dim
        self.X = np.empty((0, dim))
        self.f_raw = np.empty(0)
        self.g_raw = np.empty(0)
        self.failed = np.empty(0, dtype=bool)

    def __len__(self) -> int:
        return self.f_raw.size

    def append(self, u, f: float, g: float, failed: bool = False) -> None:
        self.X = np.vstack([self.X, np.asarray(u, dtype=float).reshape(1, self.dim)])
        self.f_raw = np.append(self.f_raw, math.nan if failed else f)
        self.g_raw = np.append(self.g_raw, math.nan if failed else g)
        self.failed = np.append(self.failed, failed)

    def penalized(self) -> Tuple[np.ndarray, np.ndarray]:
        """Costs and constraints with failures replaced by penalty values."""
        f = self.f_raw.copy()
        g = self.g_raw.copy()
        if np.any(self.failed):
            ok = ~self.failed
            worst = float(np.max(np.abs(f[ok]))) if np.any(ok) else 0.1
            gscale = float(np.max(np.abs(g[ok]))) if np.any(ok) else 0.1
            f[self.failed] = PENALTY_FACTOR * max(worst, 1e-12)
            g[self.failed] = -PENALTY_FACTOR * max(gscale, 1e-12)
        return f, g

    @property
    def feasible(self) -> np.ndarray:
        return ~self.failed & (np.nan_to_num(self.g_raw, nan=-1.0) >= 0.0)

    def incumbent(self) -> Tuple[Optional[int], float]:
        feas = self.feasible
        if not np.any(feas):
            return None, math.inf
        idx = np.flatnonzero(feas)
        k = int(idx[np.argmin(self.f_raw[idx])])
        return k, float(self.f_raw[k])


class Optimizer:
    """Sequential ask/evaluate loop; subclasses implement :meth:`select`."""

    name = "optimizer"

    def __init__(self, space: SearchSpace, evaluator: Evaluator, rng: Optional[np.random.Generator] = None):
        self.space = space
        self.evaluator = evaluator
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.data = Dataset(space.dim)
        self.history: List[IterationRecord] = []

    # -- interface
    def select(self) -> Tuple[np.ndarray, str]:
        raise NotImplementedError

    def observe(self, u: np.ndarray) -> None:
        """Hook called after a sample is appended."""

    # -- loop
    def evaluate(self, u, select_time: float = 0.0, kind: str = "sample") -> IterationRecord:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        theta = self.space.from_unit(u)
        t0 = time.perf_counter()
        failed = False
        try:
            f, g = self.evaluator(theta)
            f, g = float(f), float(g)
            if not (math.isfinite(f) and math.isfinite(g)):
                raise EvaluationFailed("non-finite evaluation")
        except EvaluationFailed:
            failed = True
            f, g = math.nan, math.nan
        eval_time = time.perf_counter() - t0
        self.data.append(u, f, g, failed)
        self.observe(u)
        if failed:
            fp, gp = self.data.penalized()
            f, g = float(fp[-1]), float(gp[-1])
        _, inc = self.data.incumbent()
        rec = IterationRecord(len(self.history), tuple(float(v) for v in theta), f, g, (not failed) and g >= 0.0,
                              failed, inc, select_time, eval_time, kind)
        self.history.append(rec)
        return rec

    def add_prior(self, theta) -> IterationRecord:
        theta = np.clip(np.asarray(theta, dtype=float), self.space.lower, self.space.upper)
        return self.evaluate(self.space.to_unit(theta), 0.0, "prior")

    def step(self) -> IterationRecord:
        t0 = time.perf_counter()
        u, kind = self.select()
        return self.evaluate(u, time.perf_counter() - t0, kind)

    def run(self, budget: int) -> List[IterationRecord]:
        for _ in range(budget):
            self.step()
        return self.history

    def best(self) -> Tuple[Optional[np.ndarray], float]:
        k, f = self.data.incumbent()
        if k is None:
            return None, math.inf
        return self.space.from_unit(self.data.X[k]), f

    def write_log(self, path) -> None:
        write_log(self.history, path, self.space.names)
