"""Dense primal active-set solver for strictly convex QPs.

    minimize    0.5 x'Hx + f'x
    subject to  G x <= h

H is factorized once (Cholesky); each working-set subproblem is solved in
range-space form using the precomputed H^-1 G'. Problems are small (tens
of variables), so the Schur complement is refactorized per iteration.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.optimize import linprog


class QpError(RuntimeError):
    pass


class QpInfeasible(QpError):
    pass


class QpMaxIterations(QpError):
    pass


class QpDegenerate(QpError):
    pass


@dataclass
class QpSolution:
    x: np.ndarray
    multipliers: np.ndarray
    active: tuple
    iterations: int
    objective: float
    residuals: dict = field(default_factory=dict)
    status: str = "optimal"

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0


def kkt_residuals(H, f, G, h, x, lam) -> dict:
    slack = G @ x - h
    return {
        "stationarity": float(np.max(np.abs(H @ x + f + G.T @ lam))) if x.size else 0.0,
        "primal": float(max(0.0, np.max(slack))) if slack.size else 0.0,
        "dual": float(max(0.0, np.max(-lam))) if lam.size else 0.0,
        "complementarity": float(np.max(np.abs(lam * slack))) if lam.size else 0.0,
    }


def find_feasible_point(G, h) -> np.ndarray:
    """A point with G x <= h, or QpInfeasible."""
    n = G.shape[1]
    res = linprog(np.zeros(n), A_ub=G, b_ub=h, bounds=[(None, None)] * n, method="highs")
    if res.status == 2:
        raise QpInfeasible("constraints are inconsistent")
    if not res.success:
        raise QpDegenerate(f"phase-1 failed: {res.message}")
    return res.x


def solve_qp(H, f, G, h, x0: Optional[np.ndarray] = None, active0: Optional[Sequence[int]] = None,
             max_iter: int = 500, tol: float = 1e-11) -> QpSolution:
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float)
    n = f.size
    G = np.asarray(G, dtype=float).reshape(-1, n)
    h = np.asarray(h, dtype=float)
    m = h.size
    try:
        cho = linalg.cho_factor(H)
    except linalg.LinAlgError as exc:
        raise QpDegenerate("Hessian is not positive definite") from exc

    feas_tol = 1e-9 * (1.0 + np.abs(h))
    if x0 is None or np.any(G @ np.asarray(x0, dtype=float) - h > feas_tol):
        x = find_feasible_point(G, h) if m else np.zeros(n)
        # phase-1 vertices can sit a hair outside; pull back onto the boundary
        x = x.copy()
    else:
        x = np.array(x0, dtype=float)

    HiGt = linalg.cho_solve(cho, G.T) if m else np.zeros((n, 0))
    x_unc = -linalg.cho_solve(cho, f)

    W: list = []
    if active0:
        slack = G @ x - h
        for i in sorted(set(int(i) for i in active0)):
            if 0 <= i < m and abs(slack[i]) <= 1e-9 * (1.0 + abs(h[i])):
                trial = W + [i]
                if np.linalg.matrix_rank(G[trial]) == len(trial):
                    W = trial

    iterations = 0
    lam_w = np.zeros(0)
    while True:
        if iterations >= max_iter:
            raise QpMaxIterations(f"no convergence in {max_iter} iterations")
        iterations += 1
        p_unc = x_unc - x
        if W:
            Gw = G[W]
            S = Gw @ HiGt[:, W]
            try:
                lam_w = linalg.solve(S, Gw @ p_unc, assume_a="pos")
            except (linalg.LinAlgError, ValueError) as exc:
                raise QpDegenerate("working set became rank deficient") from exc
            p = p_unc - HiGt[:, W] @ lam_w
        else:
            lam_w = np.zeros(0)
            p = p_unc
        if np.max(np.abs(p), initial=0.0) <= tol * (1.0 + np.max(np.abs(x), initial=0.0)):
            if lam_w.size == 0 or lam_w.min() >= -tol * (1.0 + np.max(np.abs(lam_w))):
                break
            W.pop(int(np.argmin(lam_w)))
            continue
        alpha, block = 1.0, -1
        if m:
            Gp = G @ p
            cand = np.flatnonzero(Gp > 1e-14 * (1.0 + np.abs(Gp).max()))
            if cand.size:
                in_w = np.isin(cand, W)
                cand = cand[~in_w]
            if cand.size:
                steps = (h[cand] - G[cand] @ x) / Gp[cand]
                steps = np.maximum(steps, 0.0)
                k = int(np.argmin(steps))
                if steps[k] < 1.0:
                    alpha, block = float(steps[k]), int(cand[k])
        x = x + alpha * p
        if block >= 0:
            W.append(block)

    x, lam_w = _polish(H, f, G, h, cho, x, W, lam_w)
    lam = np.zeros(m)
    if W:
        lam[W] = lam_w
    lam = np.maximum(lam, 0.0)
    res = kkt_residuals(H, f, G, h, x, lam)
    obj = float(0.5 * x @ H @ x + f @ x)
    return QpSolution(x, lam, tuple(sorted(W)), iterations, obj, res)


def _polish(H, f, G, h, cho, x, W, lam_w):
    """Re-solve the equality-constrained KKT system of the final working set."""
    if not W:
        return -linalg.cho_solve(cho, f), lam_w
    Gw = G[W]
    n, k = H.shape[0], len(W)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = Gw.T
    K[n:, :n] = Gw
    rhs = np.concatenate([-f, h[W]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return x, lam_w
    xp, lp = sol[:n], sol[n:]
    lam_old = np.zeros(G.shape[0])
    lam_old[W] = lam_w
    lam_new = np.zeros(G.shape[0])
    lam_new[W] = lp
    before = kkt_residuals(H, f, G, h, x, np.maximum(lam_old, 0.0))
    after = kkt_residuals(H, f, G, h, xp, np.maximum(lam_new, 0.0))
    if max(after.values()) <= max(before.values()):
        return xp, lp
    return x, lam_w
