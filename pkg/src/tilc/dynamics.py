"""Nonlinear single-track vehicle with steer-by-wire actuator.

The plant is integrated with fixed-step RK4 (default 1 ms); controllers
call :meth:`Plant.step` once per control period. The same class serves as
digital twin (nominal parameters) and as physical vehicle (perturbed
parameters, optional tire relaxation lag).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .params import ActuatorParams, PlantPerturbation, TireParams, VehicleParams, apply_perturbation

HALF_PI = 0.5 * math.pi


class SlipDomainError(ValueError):
    """Slip angle outside the open interval (-pi/2, pi/2)."""


class SingularityError(ValueError):
    """Longitudinal speed not strictly positive."""


class SteadyStateError(RuntimeError):
    pass


def lateral_tire_force(alpha: float, fz: float, tire: TireParams) -> float:
    """Lumped lateral force [N] of one axle from the simplified magic formula."""
    if not -HALF_PI < alpha < HALF_PI:
        raise SlipDomainError(f"slip angle {alpha!r} rad outside (-pi/2, pi/2)")
    A, B, C = tire.A, tire.B, tire.C
    return -(fz * C / (A * B)) * math.sin(B * math.atan(A * math.tan(alpha)))


def cornering_stiffness(alpha: float, fz: float, tire: TireParams) -> float:
    """Local cornering stiffness -dFy/dalpha [N/rad] of :func:`lateral_tire_force`."""
    A, B, C = tire.A, tire.B, tire.C
    ta = math.tan(alpha)
    return fz * C * math.cos(B * math.atan(A * ta)) * (1.0 + ta * ta) / (1.0 + A * A * ta * ta)


def axle_slip_angles(beta: float, r: float, vx: float, s_act: float, params: VehicleParams) -> Tuple[float, float]:
    if vx <= 0:
        raise SingularityError(f"v_x must be > 0, got {vx}")
    return beta + params.L_f * r / vx - s_act, beta - params.L_r * r / vx


def vertical_loads(vx: float, ax: float, params: VehicleParams) -> Tuple[float, float]:
    L = params.L_f + params.L_r
    w = params.M * params.g
    v2 = vx * vx
    fzf = params.L_r / L * w + params.k_a_f * v2 - params.k_x * ax
    fzr = params.L_f / L * w + params.k_a_r * v2 + params.k_x * ax
    return fzf, fzr


@dataclass(frozen=True)
class LinearizedTire:
    fy: float
    c_alpha: float
    alpha: float
    fz: float


def linearize_tire(alpha: float, fz: float, tire: TireParams) -> LinearizedTire:
    """Force and local stiffness so that Fy ~ fy - c_alpha * (a - alpha)."""
    return LinearizedTire(lateral_tire_force(alpha, fz, tire), cornering_stiffness(alpha, fz, tire), alpha, fz)


# ---------------------------------------------------------------------------
# actuator


@dataclass(frozen=True)
class ActuatorState:
    x: Tuple[float, float, float] = (0.0, 0.0, 0.0)  # transfer-function realization
    s_rl: float = 0.0  # rate-limited steer
    s_act: float = 0.0  # actuated steer after saturation [rad]


def _actuator_update(x0, x1, x2, s_rl, s_cmd, zoh, max_step, s_max):
    Ad, Bd, Cd, Dd = zoh
    n0 = Ad[0][0] * x0 + Ad[0][1] * x1 + Ad[0][2] * x2 + Bd[0] * s_cmd
    n1 = Ad[1][0] * x0 + Ad[1][1] * x1 + Ad[1][2] * x2 + Bd[1] * s_cmd
    n2 = Ad[2][0] * x0 + Ad[2][1] * x1 + Ad[2][2] * x2 + Bd[2] * s_cmd
    s_tf = Cd[0] * n0 + Cd[1] * n1 + Cd[2] * n2 + Dd * s_cmd
    ds = s_tf - s_rl
    if ds > max_step:
        ds = max_step
    elif ds < -max_step:
        ds = -max_step
    s_rl = s_rl + ds
    s_act = s_max if s_rl > s_max else (-s_max if s_rl < -s_max else s_rl)
    return n0, n1, n2, s_rl, s_act


def actuator_step(state: ActuatorState, s_cmd: float, dt: float, act: ActuatorParams = ActuatorParams()) -> ActuatorState:
    """Advance the third-order actuator by ``dt`` then apply rate limit and saturation."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    zoh = act.discretize(dt)
    n0, n1, n2, s_rl, s_act = _actuator_update(*state.x, state.s_rl, s_cmd, zoh, act.rate_max * dt, act.s_max)
    return ActuatorState((n0, n1, n2), s_rl, s_act)


# ---------------------------------------------------------------------------
# vehicle


@dataclass(frozen=True)
class VehicleState:
    beta: float = 0.0
    r: float = 0.0
    vx: float = 120.0 / 3.6
    ax: float = 0.0
    actuator: ActuatorState = ActuatorState()
    fyf: float = 0.0  # lagged lateral forces, used only with tire relaxation
    fyr: float = 0.0
    t: float = 0.0

    @property
    def s_act(self) -> float:
        return self.actuator.s_act


class Plant:
    """Single-track vehicle integrated with RK4 at a fixed inner step.

    ``relaxation_length`` > 0 adds a first-order lag on each axle force
    with time constant relaxation_length / v_x.
    """

    def __init__(self, params: VehicleParams = VehicleParams(), actuator: ActuatorParams = ActuatorParams(),
                 relaxation_length: float = 0.0, dt: float = 1e-3):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.params = params
        self.actuator = actuator
        self.relaxation_length = float(relaxation_length)
        self.dt = float(dt)
        self._zoh = actuator.discretize(self.dt)

    @classmethod
    def twin(cls, params: VehicleParams = VehicleParams(), actuator: ActuatorParams = ActuatorParams(), dt: float = 1e-3):
        return cls(params, actuator, 0.0, dt)

    @classmethod
    def perturbed(cls, params: VehicleParams, pert: PlantPerturbation,
                  actuator: ActuatorParams = ActuatorParams(), dt: float = 1e-3):
        return cls(apply_perturbation(params, pert), actuator, pert.relaxation_length, dt)

    def initial_state(self, vx: float, ax: float = 0.0) -> VehicleState:
        if vx <= 0:
            raise SingularityError(f"v_x must be > 0, got {vx}")
        return VehicleState(vx=vx, ax=ax)

    def derivatives(self, beta, r, vx, fyf, fyr, s_act, ax):
        """Time derivatives of (beta, r, vx, fyf, fyr)."""
        p = self.params
        if vx <= 0:
            raise SingularityError(f"v_x must be > 0, got {vx}")
        fzf, fzr = vertical_loads(vx, ax, p)
        af = beta + p.L_f * r / vx - s_act
        ar = beta - p.L_r * r / vx
        ff = lateral_tire_force(af, fzf, p.front)
        fr = lateral_tire_force(ar, fzr, p.rear)
        if self.relaxation_length > 0:
            k = vx / self.relaxation_length
            dff, dfr = k * (ff - fyf), k * (fr - fyr)
            ff, fr = fyf, fyr
        else:
            dff = dfr = 0.0
        dbeta = (ff + fr) / (p.M * vx) - r
        dr = (p.L_f * ff - p.L_r * fr) / p.J_zz
        return dbeta, dr, ax, dff, dfr

    def step(self, state: VehicleState, s_cmd: float, ax: float, duration: Optional[float] = None) -> VehicleState:
        """Hold ``s_cmd`` and ``ax`` for ``duration`` seconds (default one inner step)."""
        n = 1 if duration is None else int(round(duration / self.dt))
        if n < 1:
            raise ValueError("duration shorter than the integration step")
        h = self.dt
        f = self.derivatives
        relax = self.relaxation_length > 0
        act = self.actuator
        max_step = act.rate_max * h
        beta, r, vx = state.beta, state.r, state.vx
        fyf, fyr = state.fyf, state.fyr
        a = state.actuator
        x0, x1, x2 = a.x
        s_rl, s_act = a.s_rl, a.s_act
        for _ in range(n):
            k1 = f(beta, r, vx, fyf, fyr, s_act, ax)
            k2 = f(beta + 0.5 * h * k1[0], r + 0.5 * h * k1[1], vx + 0.5 * h * k1[2],
                   fyf + 0.5 * h * k1[3], fyr + 0.5 * h * k1[4], s_act, ax)
            k3 = f(beta + 0.5 * h * k2[0], r + 0.5 * h * k2[1], vx + 0.5 * h * k2[2],
                   fyf + 0.5 * h * k2[3], fyr + 0.5 * h * k2[4], s_act, ax)
            k4 = f(beta + h * k3[0], r + h * k3[1], vx + h * k3[2], fyf + h * k3[3], fyr + h * k3[4], s_act, ax)
            c = h / 6.0
            beta += c * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            r += c * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            vx += c * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
            if relax:
                fyf += c * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
                fyr += c * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4])
            x0, x1, x2, s_rl, s_act = _actuator_update(x0, x1, x2, s_rl, s_cmd, self._zoh, max_step, act.s_max)
        return VehicleState(beta, r, vx, ax, ActuatorState((x0, x1, x2), s_rl, s_act), fyf, fyr, state.t + n * h)


def vehicle_step(state: VehicleState, s_cmd: float, ax_ref: float, dt: float, params: VehicleParams = VehicleParams(),
                 perturbation: PlantPerturbation = PlantPerturbation(),
                 actuator: ActuatorParams = ActuatorParams()) -> VehicleState:
    """One RK4 step of length ``dt`` of the (optionally perturbed) vehicle."""
    plant = Plant.perturbed(params, perturbation, actuator, dt)
    return plant.step(state, s_cmd, ax_ref)


def steady_state_residual(beta, r, steer, vx, params: VehicleParams, ax: float = 0.0):
    fzf, fzr = vertical_loads(vx, ax, params)
    af, ar = axle_slip_angles(beta, r, vx, steer, params)
    ff = lateral_tire_force(af, fzf, params.front)
    fr = lateral_tire_force(ar, fzr, params.rear)
    return (ff + fr) / (params.M * vx) - r, (params.L_f * ff - params.L_r * fr) / params.J_zz


def steady_state(params: VehicleParams, steer: float, vx: float, guess=(0.0, 0.0),
                 tol: float = 1e-12, max_iter: int = 60) -> Tuple[float, float]:
    """Constant-steer, constant-speed equilibrium (beta, r) by damped Newton.

    Falls back to integrating the dynamics from ``guess`` when Newton stalls.
    """
    try:
        return _newton_steady(params, steer, vx, guess, tol, max_iter)
    except (SteadyStateError, SlipDomainError):
        pass
    beta, r = _settle_by_simulation(params, steer, vx, guess)
    try:
        return _newton_steady(params, steer, vx, (beta, r), tol, max_iter)
    except (SteadyStateError, SlipDomainError) as exc:
        raise SteadyStateError(f"no steady state for steer={steer:.6g} rad at v_x={vx:.6g} m/s") from exc


def _newton_steady(params, steer, vx, guess, tol, max_iter):
    p = params
    beta, r = guess
    fzf, fzr = vertical_loads(vx, 0.0, p)
    res = steady_state_residual(beta, r, steer, vx, p)
    norm = math.hypot(*res)
    for _ in range(max_iter):
        if norm < tol:
            return beta, r
        af, ar = axle_slip_angles(beta, r, vx, steer, p)
        cf = cornering_stiffness(af, fzf, p.front)
        cr = cornering_stiffness(ar, fzr, p.rear)
        j11 = -(cf + cr) / (p.M * vx)
        j12 = -(p.L_f * cf - p.L_r * cr) / (p.M * vx * vx) - 1.0
        j21 = -(p.L_f * cf - p.L_r * cr) / p.J_zz
        j22 = -(p.L_f**2 * cf + p.L_r**2 * cr) / (p.J_zz * vx)
        det = j11 * j22 - j12 * j21
        if det == 0.0 or not math.isfinite(det):
            raise SteadyStateError("singular Jacobian")
        db = -(j22 * res[0] - j12 * res[1]) / det
        dr = -(-j21 * res[0] + j11 * res[1]) / det
        lam = 1.0
        while lam > 1e-6:
            try:
                cand = steady_state_residual(beta + lam * db, r + lam * dr, steer, vx, p)
            except SlipDomainError:
                lam *= 0.5
                continue
            cnorm = math.hypot(*cand)
            if cnorm < norm:
                break
            lam *= 0.5
        else:
            raise SteadyStateError("line search failed")
        beta, r, res, norm = beta + lam * db, r + lam * dr, cand, cnorm
    if norm < tol:
        return beta, r
    raise SteadyStateError(f"Newton did not converge (residual {norm:.3g})")


def _settle_by_simulation(params, steer, vx, guess, horizon: float = 30.0, h: float = 1e-3):
    beta, r = guess
    p = params
    for _ in range(int(horizon / h)):
        d1 = steady_state_residual(beta, r, steer, vx, p)
        d2 = steady_state_residual(beta + 0.5 * h * d1[0], r + 0.5 * h * d1[1], steer, vx, p)
        d3 = steady_state_residual(beta + 0.5 * h * d2[0], r + 0.5 * h * d2[1], steer, vx, p)
        d4 = steady_state_residual(beta + h * d3[0], r + h * d3[1], steer, vx, p)
        beta += h / 6 * (d1[0] + 2 * d2[0] + 2 * d3[0] + d4[0])
        r += h / 6 * (d1[1] + 2 * d2[1] + 2 * d3[1] + d4[1])
        if abs(beta) > 1.0:
            raise SteadyStateError("vehicle spins at constant steer")
    return beta, r


# ---------------------------------------------------------------------------
# measurements and the MPC prediction model


@dataclass(frozen=True)
class Measurement:
    r: float
    beta: float
    s_act: float
    vx: float
    ax: float


class Sensor:
    """Noisy measurement channel of the physical vehicle.

    Yaw-rate noise is white; sideslip noise is white noise through a
    first-order low-pass whose input variance is scaled so that the output
    has the requested standard deviation. The filter starts from its
    stationary distribution.
    """

    def __init__(self, sigma_r: float = 0.0, sigma_beta: float = 0.0, cutoff_hz: float = 5.0,
                 Ts: float = 0.01, rng: Optional[np.random.Generator] = None):
        self.sigma_r = float(sigma_r)
        self.sigma_beta = float(sigma_beta)
        self.pole = math.exp(-2.0 * math.pi * cutoff_hz * Ts)
        self.input_std = self.sigma_beta * math.sqrt((1.0 + self.pole) / (1.0 - self.pole))
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._nb = self.rng.normal(0.0, self.sigma_beta) if self.sigma_beta > 0 else 0.0

    @classmethod
    def from_perturbation(cls, pert: PlantPerturbation, Ts: float, rng: Optional[np.random.Generator] = None):
        return cls(pert.sigma_r, pert.sigma_beta, pert.beta_noise_cutoff, Ts, rng)

    @property
    def noiseless(self) -> bool:
        return self.sigma_r == 0.0 and self.sigma_beta == 0.0

    def measure(self, state: VehicleState) -> Measurement:
        r, beta = state.r, state.beta
        if self.sigma_r > 0:
            r += self.rng.normal(0.0, self.sigma_r)
        if self.sigma_beta > 0:
            a = self.pole
            self._nb = a * self._nb + (1.0 - a) * self.rng.normal(0.0, self.input_std)
            beta += self._nb
        return Measurement(r, beta, state.s_act, state.vx, state.ax)


def measure(state: VehicleState, sensor: Optional[Sensor] = None) -> Measurement:
    if sensor is None:
        return Measurement(state.r, state.beta, state.s_act, state.vx, state.ax)
    return sensor.measure(state)


@dataclass(frozen=True)
class LtiModel:
    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    C: np.ndarray
    d: np.ndarray
    Ts: float
    vx: float
    front: LinearizedTire
    rear: LinearizedTire


def build_discrete_model(meas: Measurement, beta_est: float, params: VehicleParams,
                         Ts: float = 0.01, omega_act: float = 33.8) -> LtiModel:
    """Forward-Euler LTI model linearized at the measured operating point.

    Slips and loads come from the measurement (with the sideslip estimate),
    tires are linearized there, and the actuator is the first-order lag.
    """
    p = params
    vx = meas.vx
    af, ar = axle_slip_angles(beta_est, meas.r, vx, meas.s_act, p)
    fzf, fzr = vertical_loads(vx, meas.ax, p)
    tf = linearize_tire(af, fzf, p.front)
    tr = linearize_tire(ar, fzr, p.rear)
    cf, cr = tf.c_alpha, tr.c_alpha
    M, J, lf, lr = p.M, p.J_zz, p.L_f, p.L_r
    A = np.array([
        [1.0 - Ts * (cf + cr) / (M * vx), Ts * (-lf * cf + lr * cr - M * vx * vx) / (M * vx * vx), Ts * cf / (M * vx)],
        [Ts * (-lf * cf + lr * cr) / J, 1.0 - Ts * (lf * lf * cf + lr * lr * cr) / (J * vx), Ts * cf * lf / J],
        [0.0, 0.0, 1.0 - Ts * omega_act],
    ])
    B = np.array([0.0, 0.0, Ts * omega_act])
    E = np.array([[Ts, 0.0], [0.0, Ts], [0.0, 0.0]])
    C = np.array([0.0, 1.0, 0.0])
    qf = tf.fy + cf * tf.alpha
    qr = tr.fy + cr * tr.alpha
    d = np.array([(qf + qr) / (M * vx), (lf * qf - lr * qr) / J])
    return LtiModel(A, B, E, C, d, Ts, vx, tf, tr)
