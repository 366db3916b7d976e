"""Set-membership global optimization with a risk-weighted black-box constraint.

Cost and constraint are bounded by Lipschitz cones around the samples.
The next point either exploits the optimistic cost estimate, when its
lower bound promises enough improvement, or explores where the bound
gap is widest. Candidates come from a scrambled Sobol mesh, the
midpoints between each new sample and all previous ones, and a small
compass pattern around the incumbent whose radius is half the distance
to its nearest other sample.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.stats import qmc

from .optim import Dataset, Evaluator, Optimizer
from .space import SearchSpace, distances


@dataclass(frozen=True)
class SmgoConfig:
    delta: float = 0.5
    beta: float = 0.1
    alpha: float = 0.005
    inflation: float = 1.1
    mesh_log2: int = 10
    local_pattern: bool = True
    lipschitz_floor: float = 0.0
    lipschitz_floor_g: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if self.beta < 0 or self.alpha < 0:
            raise ValueError("beta and alpha must be non-negative")
        if self.inflation < 1.0:
            raise ValueError("inflation factor must be at least 1")


@dataclass
class Estimates:
    gamma_f: float
    eps_f: float
    gamma_g: float
    eps_g: float


class DegenerateDataError(ValueError):
    pass


def _max_slope(X: np.ndarray, y: np.ndarray) -> float:
    if y.size < 2:
        return 0.0
    D = distances(X, X)
    iu = np.triu_indices(y.size, 1)
    d = D[iu]
    dy = np.abs(y[:, None] - y[None, :])[iu]
    mask = d > 0
    return float(np.max(dy[mask] / d[mask])) if np.any(mask) else 0.0


def _spread(X: np.ndarray, y: np.ndarray) -> float:
    """Half the largest spread among repeated evaluations of one point."""
    if y.size < 2:
        return 0.0
    _, inv = np.unique(X, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    eps = 0.0
    for grp in np.unique(inv):
        vals = y[inv == grp]
        if vals.size > 1:
            eps = max(eps, 0.5 * float(np.max(vals) - np.min(vals)))
    return eps


def update_estimates(data: Dataset, config: SmgoConfig = SmgoConfig()) -> Estimates:
    """Lipschitz constants (inflated observed slopes) and noise bounds; failures are excluded."""
    ok = ~data.failed
    X, f, g = data.X[ok], data.f_raw[ok], data.g_raw[ok]
    floors = config.lipschitz_floor > 0 and config.lipschitz_floor_g > 0
    if len(data) >= 2 and np.unique(data.X, axis=0).shape[0] < 2 and not floors:
        raise DegenerateDataError("all samples share the same parameters")
    ef, eg = _spread(X, f), _spread(X, g)
    gf = max(config.inflation * _max_slope(X, f), config.lipschitz_floor)
    gg = max(config.inflation * _max_slope(X, g), config.lipschitz_floor_g)
    return Estimates(gf, ef, gg, eg)


def cone_bounds(U: np.ndarray, X: np.ndarray, y: np.ndarray, gamma: float, eps: float = 0.0,
                D: Optional[np.ndarray] = None):
    """Lower and upper Lipschitz bounds at the rows of U from samples (X, y)."""
    D = distances(U, X) if D is None else D
    upper = np.min(y[None, :] + eps + gamma * D, axis=1)
    lower = np.max(y[None, :] - eps - gamma * D, axis=1)
    return lower, upper


def bounds(theta_u, data: Dataset, est: Estimates) -> Tuple[np.ndarray, np.ndarray]:
    f, _ = data.penalized()
    return cone_bounds(np.atleast_2d(theta_u), data.X, f, est.gamma_f, est.eps_f)


def uncertainty_mean(lower: np.ndarray, upper: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return upper - lower, 0.5 * (upper + lower)


@dataclass
class CandidateScores:
    f_mean: np.ndarray
    lam: np.ndarray
    f_lower: np.ndarray
    g_score: np.ndarray
    g_upper: np.ndarray

    @property
    def passing(self) -> np.ndarray:
        return self.g_score >= 0.0


def score_candidates(C: np.ndarray, data: Dataset, est: Estimates, config: SmgoConfig,
                     D: Optional[np.ndarray] = None) -> CandidateScores:
    f, g = data.penalized()
    D = distances(C, data.X) if D is None else D
    f_lo, f_up = cone_bounds(C, data.X, f, est.gamma_f, est.eps_f, D)
    g_lo, g_up = cone_bounds(C, data.X, g, est.gamma_g, est.eps_g, D)
    lam, f_mean = uncertainty_mean(f_lo, f_up)
    g_mean = 0.5 * (g_lo + g_up)
    score = config.delta * g_mean + (1.0 - config.delta) * g_lo
    return CandidateScores(f_mean, lam, f_lo, score, g_up)


def _argbest(primary: np.ndarray, lam: np.ndarray, C: np.ndarray) -> int:
    """Index minimizing ``primary``; ties go to larger lambda, then lexicographically smaller point."""
    keys = [C[:, j] for j in range(C.shape[1] - 1, -1, -1)] + [-lam, primary]
    return int(np.lexsort(keys)[0])


def select_candidate(C: np.ndarray, sc: CandidateScores, config: SmgoConfig) -> Optional[int]:
    """Minimizer of f_mean - beta * lambda among constraint-passing candidates (None if none pass)."""
    ok = np.flatnonzero(sc.passing)
    if ok.size == 0:
        return None
    obj = sc.f_mean[ok] - config.beta * sc.lam[ok]
    return int(ok[_argbest(obj, sc.lam[ok], C[ok])])


def exploitation_test(f_lower: float, f_best: float, gamma_f: float, config: SmgoConfig) -> bool:
    return bool(f_lower <= f_best - config.alpha * gamma_f)


def exploration_step(C: np.ndarray, sc: CandidateScores, fresh: Optional[np.ndarray] = None,
                     optimistic: bool = False) -> int:
    """Widest-gap constraint-passing candidate; if none pass, the best constraint score.

    ``fresh`` masks out candidates that coincide with samples so the
    fallback cannot stall on a point that was already evaluated. With
    ``optimistic`` the fallback ranks by the constraint upper bound, which
    grows away from the samples; used before any feasible point is known.
    """
    fresh = np.ones(C.shape[0], dtype=bool) if fresh is None else fresh
    if not np.any(fresh):
        fresh = np.ones(C.shape[0], dtype=bool)
    ok = np.flatnonzero(sc.passing & fresh)
    if ok.size == 0:
        idx = np.flatnonzero(fresh)
        key = sc.g_upper if optimistic else sc.g_score
        return int(idx[_argbest(-key[idx], sc.lam[idx], C[idx])])
    return int(ok[_argbest(-sc.lam[ok], sc.lam[ok], C[ok])])


def local_pattern(data: Dataset) -> np.ndarray:
    """Axis and diagonal unit directions around the incumbent, clipped to the unit box."""
    k, _ = data.incumbent()
    if k is None:
        return np.empty((0, data.X.shape[1]))
    x = data.X[k]
    d = distances(x[None, :], data.X)[0]
    d = d[d > 0]
    if d.size == 0:
        return np.empty((0, x.size))
    dim = x.size
    eye = np.eye(dim)
    dirs = [eye, -eye]
    if dim > 1:
        diag = np.array(np.meshgrid(*[[-1.0, 1.0]] * dim)).reshape(dim, -1).T
        dirs.append(diag / math.sqrt(dim))
    dirs = np.vstack(dirs)
    return np.clip(x + 0.5 * float(d.min()) * dirs, 0.0, 1.0)


def _estimable(data: Dataset, config: SmgoConfig) -> bool:
    """Two distinct samples, or one sample when both Lipschitz floors are given."""
    n = np.unique(data.X, axis=0).shape[0]
    return n >= 2 or (n == 1 and config.lipschitz_floor > 0 and config.lipschitz_floor_g > 0)


class Smgo(Optimizer):
    name = "smgo"

    def __init__(self, space: SearchSpace, evaluator: Evaluator, config: SmgoConfig = SmgoConfig(),
                 rng: Optional[np.random.Generator] = None):
        super().__init__(space, evaluator, rng)
        self.config = config
        sob = qmc.Sobol(space.dim, scramble=True, seed=self.rng)
        self.mesh = sob.random_base2(config.mesh_log2)
        self.midpoints = np.empty((0, space.dim))
        self.estimates: Optional[Estimates] = None

    @property
    def candidates(self) -> np.ndarray:
        C = np.vstack([self.mesh, self.midpoints]) if self.midpoints.size else self.mesh
        if self.config.local_pattern:
            loc = local_pattern(self.data)
            if loc.size:
                C = np.vstack([C, loc])
        return C

    def observe(self, u: np.ndarray) -> None:
        X = self.data.X
        if X.shape[0] > 1:
            mids = 0.5 * (X[:-1] + u[None, :])
            self.midpoints = np.vstack([self.midpoints, mids])
        if _estimable(self.data, self.config):
            self.estimates = update_estimates(self.data, self.config)

    def select(self) -> Tuple[np.ndarray, str]:
        X = self.data.X
        C = self.candidates
        if X.shape[0] == 0:
            return self.rng.uniform(size=self.space.dim), "random"
        if self.estimates is None:
            d = np.min(distances(C, X), axis=1)
            return C[int(np.argmax(d))].copy(), "spread"
        est = self.estimates
        D = distances(C, X)
        sc = score_candidates(C, self.data, est, self.config, D)
        k = select_candidate(C, sc, self.config)
        _, f_best = self.data.incumbent()
        if k is not None and math.isfinite(f_best) and exploitation_test(sc.f_lower[k], f_best, est.gamma_f,
                                                                         self.config):
            return C[k].copy(), "exploit"
        fresh = np.min(D, axis=1) > 0
        return C[exploration_step(C, sc, fresh, not math.isfinite(f_best))].copy(), "explore"

    # -- persistence
    def snapshot(self) -> dict:
        d = self.data
        return {
            "config": asdict(self.config),
            "space": {"lower": self.space.lower, "upper": self.space.upper, "log": self.space.log,
                      "names": self.space.names},
            "X": d.X.tolist(), "f": [None if math.isnan(v) else v for v in d.f_raw],
            "g": [None if math.isnan(v) else v for v in d.g_raw], "failed": d.failed.tolist(),
            "mesh": self.mesh.tolist(), "midpoints": self.midpoints.tolist(),
            "rng": self.rng.bit_generator.state,
            "history": [asdict(r) for r in self.history],
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.snapshot(), fh)

    @classmethod
    def restore(cls, snap: dict, evaluator: Evaluator) -> "Smgo":
        from .optim import IterationRecord
        sp = snap["space"]
        space = SearchSpace(tuple(sp["lower"]), tuple(sp["upper"]), tuple(sp["log"]), tuple(sp["names"]))
        rng = np.random.default_rng()
        rng.bit_generator.state = snap["rng"]
        obj = cls.__new__(cls)
        Optimizer.__init__(obj, space, evaluator, rng)
        obj.config = SmgoConfig(**snap["config"])
        obj.mesh = np.array(snap["mesh"]).reshape(-1, space.dim)
        obj.midpoints = np.array(snap["midpoints"]).reshape(-1, space.dim)
        nan = lambda v: math.nan if v is None else v
        d = obj.data
        d.X = np.array(snap["X"]).reshape(-1, space.dim)
        d.f_raw = np.array([nan(v) for v in snap["f"]], dtype=float)
        d.g_raw = np.array([nan(v) for v in snap["g"]], dtype=float)
        d.failed = np.array(snap["failed"], dtype=bool)
        obj.history = [IterationRecord(**{**r, "theta": tuple(r["theta"])}) for r in snap["history"]]
        obj.estimates = update_estimates(d, obj.config) if _estimable(d, obj.config) else None
        return obj

    @classmethod
    def load(cls, path, evaluator: Evaluator) -> "Smgo":
        with open(path) as fh:
            return cls.restore(json.load(fh), evaluator)


def smgo_iterate(opt: Smgo):
    return opt.step()
