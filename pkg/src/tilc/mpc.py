"""Yaw-rate tracking MPC with per-step tire linearization.

The prediction model is rebuilt at each sample around the measured state,
frozen over the horizon, and condensed (single shooting) into a dense QP
over the input sequence and one slip slack variable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .dynamics import LtiModel, Measurement, build_discrete_model
from .params import VehicleParams
from .qp import QpError, QpSolution, solve_qp


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20
    w_beta: float = 0.2
    w_r: float = 0.8
    w_s: float = 0.0
    w_u: float = 1.0
    w_rho: float = 100.0
    alpha_f_max: float = math.radians(9.10)
    rate_max: float = math.radians(100.0)
    Ts: float = 0.01
    omega_act: float = 33.8

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")
        if min(self.w_beta, self.w_r, self.w_s, self.w_u) < 0:
            raise ValueError("weights must be non-negative")
        if self.w_rho <= 0:
            raise ValueError("slack weight must be positive")

    @property
    def W_x(self) -> np.ndarray:
        return np.diag([self.w_beta, self.w_r, self.w_s])


@dataclass
class CondensedQp:
    """0.5 z'Hz + f'z + const over z = [u_0 .. u_{N-1}, rho], s.t. G z <= h."""

    H: np.ndarray
    f: np.ndarray
    const: float
    G: np.ndarray
    h: np.ndarray
    # affine state prediction X = X0 + Gamma u, stacked [x_1; ...; x_N]
    X0: np.ndarray
    Gamma: np.ndarray
    x_ref: np.ndarray

    @property
    def n_inputs(self) -> int:
        return self.f.size - 1

    def cost(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.f @ z + self.const)

    def predict(self, u) -> np.ndarray:
        return (self.X0 + self.Gamma @ np.asarray(u, dtype=float)).reshape(-1, 3)


def prepare(meas: Measurement, beta_est: float, params: VehicleParams, config: MpcConfig = MpcConfig()):
    """Prediction model at the current sample, its disturbance, and the initial state."""
    model = build_discrete_model(meas, beta_est, params, config.Ts, config.omega_act)
    x0 = np.array([beta_est, meas.r, meas.s_act])
    return model, model.d, x0


def slip_readout(model: LtiModel, params: VehicleParams) -> np.ndarray:
    """Row vector mapping x = [beta, r, s_act] to the front slip angle."""
    return np.array([1.0, params.L_f / model.vx, -1.0])


def condense(model: LtiModel, x0, r_ref: Sequence[float], config: MpcConfig,
             params: VehicleParams) -> CondensedQp:
    N = config.horizon
    r_ref = np.asarray(r_ref, dtype=float).ravel()
    if r_ref.size == 1:
        r_ref = np.full(N, r_ref[0])
    if r_ref.size != N:
        raise ValueError(f"reference has {r_ref.size} samples, horizon is {N}")
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != 3:
        raise ValueError("state must have three components")
    A, B, Ed = model.A, model.B, model.E @ model.d

    X0 = np.zeros(3 * N)
    Gamma = np.zeros((3 * N, N))
    x = x0.copy()
    AkB = [B]
    for k in range(N):
        x = A @ x + Ed
        X0[3 * k:3 * k + 3] = x
        if k:
            AkB.append(A @ AkB[-1])
    for k in range(N):
        for j in range(k + 1):
            Gamma[3 * k:3 * k + 3, j] = AkB[k - j]

    x_ref = np.zeros(3 * N)
    x_ref[1::3] = r_ref
    Wbar = np.kron(np.eye(N), config.W_x)
    e0 = X0 - x_ref
    GW = Gamma.T @ Wbar
    n = N + 1
    H = np.zeros((n, n))
    H[:N, :N] = 2.0 * (GW @ Gamma + config.w_u * np.eye(N))
    H[N, N] = 2.0 * N * config.w_rho
    H = 0.5 * (H + H.T)
    f = np.zeros(n)
    f[:N] = 2.0 * GW @ e0
    const = float(e0 @ Wbar @ e0)

    # actuated-steer rate: s_k - s_{k-1}, k = 1..N
    s_idx = np.arange(N) * 3 + 2
    T = np.eye(N) - np.eye(N, k=-1)
    s_prev = np.zeros(N)
    s_prev[0] = x0[2]
    rate_G = T @ Gamma[s_idx]
    rate_0 = T @ X0[s_idx] - s_prev
    du = config.rate_max * config.Ts

    # front slip read-out per predicted state
    c = slip_readout(model, params)
    slip_G = np.stack([c @ Gamma[3 * k:3 * k + 3] for k in range(N)])
    slip_0 = np.array([c @ X0[3 * k:3 * k + 3] for k in range(N)])
    amax = config.alpha_f_max

    zN = np.zeros((N, 1))
    oN = np.ones((N, 1))
    G = np.vstack([
        np.hstack([rate_G, zN]),
        np.hstack([-rate_G, zN]),
        np.hstack([slip_G, -oN]),
        np.hstack([-slip_G, -oN]),
        np.concatenate([np.zeros(N), [-1.0]])[None, :],
    ])
    h = np.concatenate([
        du - rate_0,
        du + rate_0,
        amax - slip_0,
        amax + slip_0,
        [0.0],
    ])
    return CondensedQp(H, f, const, G, h, X0, Gamma, x_ref)


def feasible_start(qp: CondensedQp, s0: float, margin: float = 1e-9) -> np.ndarray:
    """Hold the actuator at ``s0`` and pick the smallest slack that satisfies the slip bounds."""
    N = qp.n_inputs
    z = np.zeros(N + 1)
    z[:N] = s0
    viol = qp.G[:-1] @ z - qp.h[:-1]
    z[N] = max(0.0, float(np.max(viol[2 * N:]))) + margin
    return z


@dataclass
class MpcDiagnostics:
    t: float
    cost: float
    rho: float
    n_active: int
    iterations: int
    status: str


class Mpc:
    """Receding-horizon controller; call :meth:`step` once per sample."""

    def __init__(self, params: VehicleParams = VehicleParams(), config: MpcConfig = MpcConfig(), keep_log: bool = False):
        self.params = params
        self.config = config
        self.keep_log = keep_log
        self.log: List[MpcDiagnostics] = []
        self.reset()

    def reset(self):
        self.u_prev = 0.0
        self._z_prev: Optional[np.ndarray] = None
        self._active_prev: tuple = ()
        self.last_solution: Optional[QpSolution] = None
        self.failures = 0

    def step(self, meas: Measurement, r_ref, beta_est: Optional[float] = None, t: float = 0.0) -> float:
        beta = meas.beta if beta_est is None else beta_est
        model, _, x0 = prepare(meas, beta, self.params, self.config)
        qp = condense(model, x0, r_ref, self.config, self.params)
        z0 = self._warm_start(qp, x0[2])
        try:
            sol = solve_qp(qp.H, qp.f, qp.G, qp.h, x0=z0, active0=self._active_prev)
        except QpError as exc:
            # hold the previous command; the next sample re-linearizes
            self.failures += 1
            self._z_prev, self._active_prev = None, ()
            if self.keep_log:
                self.log.append(MpcDiagnostics(t, math.nan, math.nan, 0, 0, type(exc).__name__))
            return self.u_prev
        self.last_solution = sol
        self._z_prev, self._active_prev = sol.x, sol.active
        self.u_prev = float(sol.x[0])
        if self.keep_log:
            self.log.append(MpcDiagnostics(t, sol.objective + qp.const, float(sol.x[-1]), len(sol.active),
                                           sol.iterations, sol.status))
        return self.u_prev

    def _warm_start(self, qp: CondensedQp, s0: float) -> np.ndarray:
        if self._z_prev is not None:
            N = qp.n_inputs
            z = np.empty(N + 1)
            z[:N - 1] = self._z_prev[1:N]
            z[N - 1] = self._z_prev[N - 1]
            viol = qp.G[:-1, :N] @ z[:N] - qp.h[:-1]
            if np.all(viol[:2 * N] <= 0.0):
                z[N] = max(0.0, float(np.max(viol[2 * N:]))) + 1e-9
                return z
        return feasible_start(qp, s0)


def mpc_step(meas: Measurement, r_ref, config: MpcConfig, controller: Mpc) -> float:
    return controller.step(meas, r_ref)
