"""Constrained Bayesian optimization: GP surrogates for cost and constraint.

The acquisition is expected improvement times the posterior probability
that the constraint holds (g >= 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.stats import norm

from .optim import Evaluator, Optimizer
from .space import SearchSpace

JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class GpFitError(np.linalg.LinAlgError):
    pass


@dataclass
class GpModel:
    """Squared-exponential ARD GP on standardized targets."""

    X: np.ndarray
    y: np.ndarray
    y_mean: float
    y_std: float
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    jitter: float
    L: np.ndarray
    alpha: np.ndarray
    lml: float

    def kernel(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        return _se_kernel(A, B, self.lengthscales, self.signal_var)


def _se_kernel(A, B, ls, sf2):
    A = np.atleast_2d(A) / ls
    B = np.atleast_2d(B) / ls
    d2 = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2.0 * A @ B.T
    return sf2 * np.exp(-0.5 * np.maximum(d2, 0.0))


def _chol(K: np.ndarray) -> Tuple[np.ndarray, float]:
    n = K.shape[0]
    for jit in JITTERS:
        try:
            L = np.linalg.cholesky(K + jit * np.eye(n))
            return L, jit
        except np.linalg.LinAlgError:
            continue
    raise GpFitError("kernel matrix not positive definite even with 1e-6 jitter")


def _neg_lml(logp, X, y, with_grad=True):
    d = X.shape[1]
    ls = np.exp(logp[:d])
    sf2 = math.exp(2 * logp[d])
    sn2 = math.exp(2 * logp[d + 1])
    n = y.size
    Kf = _se_kernel(X, X, ls, sf2)
    K = Kf + sn2 * np.eye(n)
    try:
        L, jit = _chol(K)
    except GpFitError:
        return (1e25, np.zeros_like(logp)) if with_grad else 1e25
    alpha = cho_solve((L, True), y)
    nll = 0.5 * y @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * math.log(2 * math.pi)
    if not with_grad:
        return nll
    Kinv = cho_solve((L, True), np.eye(n))
    W = Kinv - np.outer(alpha, alpha)
    grad = np.empty_like(logp)
    for j in range(d):
        dj = (X[:, j][:, None] - X[:, j][None, :]) ** 2 / ls[j] ** 2
        grad[j] = 0.5 * np.sum(W * (Kf * dj))
    grad[d] = 0.5 * np.sum(W * (2.0 * Kf))
    grad[d + 1] = 0.5 * np.trace(W) * 2.0 * sn2
    return nll, grad


def gp_fit(X, y, rng: Optional[np.random.Generator] = None, restarts: int = 4,
           lengthscale_bounds=(0.05, 10.0), noise_bounds=(1e-6, 1e-1), signal_bounds=(1e-2, 1e1)) -> GpModel:
    """Maximum-marginal-likelihood fit; noise bounds are relative to the target std."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 2:
        raise ValueError("need at least two points")
    rng = rng if rng is not None else np.random.default_rng(0)
    mu = float(np.mean(y))
    sd = float(np.std(y))
    sd = sd if sd > 0 else 1.0
    z = (y - mu) / sd
    d = X.shape[1]
    bounds = ([tuple(np.log(lengthscale_bounds))] * d + [tuple(np.log(np.sqrt(signal_bounds)))]
              + [tuple(np.log(noise_bounds))])
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    starts = [np.concatenate([np.full(d, math.log(0.3)), [0.0], [math.log(1e-3)]])]
    starts += [lo + rng.uniform(size=lo.size) * (hi - lo) for _ in range(max(restarts - 1, 0))]
    best = None
    for x0 in starts:
        x0 = np.clip(x0, lo, hi)
        res = minimize(_neg_lml, x0, args=(X, z), jac=True, method="L-BFGS-B", bounds=bounds)
        if best is None or res.fun < best.fun:
            best = res
    p = best.x
    ls = np.exp(p[:d])
    sf2 = math.exp(2 * p[d])
    sn2 = math.exp(2 * p[d + 1])
    L, jit = _chol(_se_kernel(X, X, ls, sf2) + sn2 * np.eye(y.size))
    alpha = cho_solve((L, True), z)
    return GpModel(X, y, mu, sd, ls, sf2, sn2, jit, L, alpha, -float(best.fun))


def gp_predict(model: GpModel, U) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and standard deviation (latent function) in target units."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Ks = model.kernel(U, model.X)
    mean = Ks @ model.alpha
    v = solve_triangular(model.L, Ks.T, lower=True)
    var = model.signal_var - np.sum(v * v, axis=0)
    var = np.where(var < 0.0, 0.0, var)
    return model.y_mean + model.y_std * mean, model.y_std * np.sqrt(var)


def expected_improvement(mu, sigma, f_best: float) -> np.ndarray:
    """Closed-form EI for minimization."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    imp = f_best - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, imp / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = np.where(sigma > 0, imp * norm.cdf(z) + sigma * norm.pdf(z), np.maximum(imp, 0.0))
    return np.maximum(ei, 0.0)


def feasibility_probability(mu, sigma) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(sigma > 0, norm.cdf(mu / np.where(sigma > 0, sigma, 1.0)), (mu >= 0).astype(float))
    return p


@dataclass(frozen=True)
class CboConfig:
    exploration_ratio: float = 0.5
    gp_restarts: int = 4
    acq_starts: int = 8
    acq_samples: int = 1024
    anchor_scale: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.exploration_ratio <= 1.0:
            raise ValueError("exploration ratio must lie in [0, 1]")


class Cbo(Optimizer):
    name = "cbo"

    def __init__(self, space: SearchSpace, evaluator: Evaluator, config: CboConfig = CboConfig(),
                 rng: Optional[np.random.Generator] = None):
        super().__init__(space, evaluator, rng)
        self.config = config
        self.gp_f: Optional[GpModel] = None
        self.gp_g: Optional[GpModel] = None

    def fit(self) -> None:
        d = self.data
        ok = ~d.failed
        f, g = d.penalized()
        self.gp_f = gp_fit(d.X[ok], f[ok], self.rng, self.config.gp_restarts) if np.sum(ok) >= 2 else None
        self.gp_g = gp_fit(d.X, g, self.rng, self.config.gp_restarts)

    def acquisition(self, U) -> np.ndarray:
        """EI times feasibility probability; feasibility probability alone when nothing is feasible yet."""
        U = np.atleast_2d(U)
        mg, sg = gp_predict(self.gp_g, U)
        pof = feasibility_probability(mg, sg)
        _, f_best = self.data.incumbent()
        if not math.isfinite(f_best) or self.gp_f is None:
            return pof
        mf, sf = gp_predict(self.gp_f, U)
        return expected_improvement(mf, sf, f_best) * pof

    def _starts(self) -> np.ndarray:
        cfg, dim = self.config, self.space.dim
        k, _ = self.data.incumbent()
        if k is None or self.rng.uniform() < cfg.exploration_ratio:
            return self.rng.uniform(size=(cfg.acq_starts, dim))
        anchor = self.data.X[k]
        pts = anchor + cfg.anchor_scale * self.rng.normal(size=(cfg.acq_starts - 1, dim))
        return np.clip(np.vstack([anchor, pts]), 0.0, 1.0)

    def select(self) -> Tuple[np.ndarray, str]:
        dim = self.space.dim
        if len(self.data) < 2:
            return self.rng.uniform(size=dim), "random"
        self.fit()
        cfg = self.config
        # screen a random batch, then polish the best few together with the start set
        batch = self.rng.uniform(size=(cfg.acq_samples, dim))
        vals = self.acquisition(batch)
        top = batch[np.argsort(-vals)[:max(cfg.acq_starts // 2, 1)]]
        starts = np.vstack([self._starts(), top])
        scale = float(np.max(vals)) if np.max(vals) > 0 else 1.0
        best_u, best_v = None, -math.inf
        for x0 in starts:
            res = minimize(lambda u: -float(self.acquisition(u)[0]) / scale, x0, method="L-BFGS-B",
                           bounds=[(0.0, 1.0)] * dim, options={"maxiter": 50})
            v = -res.fun * scale
            if v > best_v:
                best_u, best_v = np.clip(res.x, 0.0, 1.0), v
        return best_u, "acquisition"


def propose(opt: Cbo) -> np.ndarray:
    return opt.select()[0]


def cbo_iterate(opt: Cbo):
    return opt.step()
