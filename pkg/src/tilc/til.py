"""Twin-in-the-Loop control: MPC on the twin, open-loop transfer to the vehicle,
and a PID compensator on the twin-minus-vehicle mixed yaw/sideslip error.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence

import numpy as np

from .dynamics import (Measurement, Plant, Sensor, SlipDomainError, axle_slip_angles, measure,
                       vertical_loads)
from .maneuvers import Maneuver
from .mpc import Mpc, MpcConfig
from .params import ActuatorParams, PlantPerturbation, VehicleParams
from .refgen import ReferenceGenerator, StaticYawMap, build_static_map


class SimulationDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class PidGains:
    """k_p [rad per rad/s of mixed error], T_I [s] (inf disables the integrator), T_D [s]."""

    k_p: float
    T_I: float
    T_D: float

    def __post_init__(self):
        if not self.T_I > 0:
            raise ValueError(f"T_I must be positive, got {self.T_I}")
        if self.T_D < 0:
            raise ValueError(f"T_D must be non-negative, got {self.T_D}")

    def as_tuple(self):
        return (self.k_p, self.T_I, self.T_D)

    @classmethod
    def zero(cls) -> "PidGains":
        return cls(0.0, math.inf, 0.0)


@dataclass(frozen=True)
class CompensatorConfig:
    zeta: float = 0.2
    N_D: float = 10.0
    Ts: float = 0.01
    anti_windup: bool = True
    saturate: bool = True
    alpha_f_max: float = math.radians(9.10)

    def __post_init__(self):
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError("zeta must lie in [0, 1]")


def mixed_signal(r: float, beta: float, zeta: float) -> float:
    return (1.0 - zeta) * r - zeta * beta


class Pid:
    """Tustin PID with filtered derivative (pole N_D/T_D) and conditional integration."""

    def __init__(self, gains: PidGains, Ts: float = 0.01, N_D: float = 10.0, anti_windup: bool = True):
        self.gains = gains
        self.Ts = Ts
        self.N_D = N_D
        self.anti_windup = anti_windup
        self.reset()

    def reset(self):
        self.integral = 0.0
        self.derivative = 0.0
        self.e_prev = 0.0
        self.saturated = False

    def step(self, e: float, lo: float = -math.inf, hi: float = math.inf) -> float:
        kp, ti, td = self.gains.k_p, self.gains.T_I, self.gains.T_D
        Ts = self.Ts
        d_int = 0.0 if math.isinf(ti) else kp * Ts / (2.0 * ti) * (e + self.e_prev)
        integral = self.integral + d_int
        if td > 0:
            tau = td / self.N_D
            self.derivative = ((2 * tau - Ts) * self.derivative + 2 * kp * td * (e - self.e_prev)) / (2 * tau + Ts)
        u = kp * e + integral + self.derivative
        self.saturated = u > hi or u < lo
        if self.anti_windup and ((u > hi and d_int > 0) or (u < lo and d_int < 0)):
            integral = self.integral
        self.integral = integral
        self.e_prev = e
        return min(max(u, lo), hi)


def pid_step(pid: Pid, y_eps: float, lo: float = -math.inf, hi: float = math.inf) -> float:
    return pid.step(y_eps, lo, hi)


def delta_bounds(s_twin_cmd: float, meas: Measurement, params: VehicleParams, alpha_f_max: float):
    """Interval for s_delta keeping the total steer inside |alpha_f| <= alpha_f_max."""
    if meas.vx <= 0:
        raise ValueError("v_x must be positive")
    s_mid = meas.beta + params.L_f * meas.r / meas.vx
    return s_mid - alpha_f_max - s_twin_cmd, s_mid + alpha_f_max - s_twin_cmd


def delta_saturation(s_delta: float, s_twin_cmd: float, meas: Measurement, params: VehicleParams,
                     alpha_f_max: float) -> float:
    lo, hi = delta_bounds(s_twin_cmd, meas, params, alpha_f_max)
    return min(max(s_delta, lo), hi)


@dataclass(frozen=True)
class TilSetup:
    """Everything that defines the twin, the vehicle, and the nominal controller."""

    params: VehicleParams = VehicleParams()
    perturbation: PlantPerturbation = PlantPerturbation.loaded_vehicle()
    actuator: ActuatorParams = ActuatorParams()
    mpc: MpcConfig = MpcConfig()
    compensator: CompensatorConfig = CompensatorConfig()
    f_ref: float = 6.3
    plant_dt: float = 1e-3
    beta_divergence: float = 0.5

    @property
    def Ts(self) -> float:
        return self.mpc.Ts

    def twin_plant(self) -> Plant:
        return Plant.twin(self.params, self.actuator, self.plant_dt)

    def vehicle_plant(self) -> Plant:
        return Plant.perturbed(self.params, self.perturbation, self.actuator, self.plant_dt)

    def static_map(self) -> StaticYawMap:
        return build_static_map(self.params)

    def identical_plants(self) -> "TilSetup":
        return replace(self, perturbation=PlantPerturbation())


TRACE_COLUMNS = (
    "t", "s_ref", "r_ref", "vx", "ax",
    "twin_beta", "twin_r", "twin_s_cmd", "twin_s_act",
    "beta", "r", "beta_meas", "r_meas", "s_cmd", "s_act", "s_delta",
    "eps_twin", "eps", "y_eps", "alpha_f", "alpha_r", "fz_f", "fz_r",
)


@dataclass
class TilTrace:
    """Per-sample signals of one run; vehicle columns hold true and measured values."""

    columns: Dict[str, np.ndarray]
    Ts: float
    mode: str = "til"

    def __getattr__(self, name):
        cols = self.__dict__.get("columns")
        if cols is not None and name in cols:
            return cols[name]
        raise AttributeError(name)

    def __len__(self) -> int:
        return len(self.columns["t"])

    def to_csv(self, path) -> None:
        keys = list(self.columns)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for row in zip(*(self.columns[k] for k in keys)):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, Ts: float = 0.01, mode: str = "til") -> "TilTrace":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            keys = next(rd)
            data = [[float(v) for v in row] for row in rd]
        arr = np.array(data).reshape(-1, len(keys))
        return cls({k: arr[:, i].copy() for i, k in enumerate(keys)}, Ts, mode)


def vehicle_trajectory_columns(trace: TilTrace) -> Dict[str, np.ndarray]:
    """Single-plant export: t, beta, r, v_x, a_x, s_cmd, s_act, slips and vertical loads."""
    c = trace.columns
    return {"t": c["t"], "beta": c["beta"], "r": c["r"], "v_x": c["vx"], "a_x": c["ax"], "s_cmd": c["s_cmd"],
            "s_act": c["s_act"], "alpha_f": c["alpha_f"], "alpha_r": c["alpha_r"], "F_z_f": c["fz_f"],
            "F_z_r": c["fz_r"]}


@dataclass
class TwinRun:
    """Nominal MPC on the noise-free twin; independent of the compensator gains."""

    beta: np.ndarray
    r: np.ndarray
    vx: np.ndarray
    s_act: np.ndarray
    s_cmd: np.ndarray
    r_ref: np.ndarray


class TilLoop:
    """One closed-loop episode advanced one control period at a time.

    Modes: ``til`` (compensated twin command), ``open-loop`` (twin command
    plus an optional excitation, no compensator), ``mpc`` (MPC on the
    twin only), ``mpc-on-vehicle`` (nominal MPC closed on the noisy vehicle).
    """

    MODES = ("til", "open-loop", "mpc", "mpc-on-vehicle")

    def __init__(self, maneuver: Maneuver, setup: TilSetup = TilSetup(), gains: Optional[PidGains] = None,
                 rng: Optional[np.random.Generator] = None, mode: str = "til", twin: Optional[TwinRun] = None,
                 excitation: Optional[Sequence[float]] = None):
        if mode not in self.MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "mpc" and twin is not None:
            raise ValueError("the twin-only mode simulates the twin itself")
        if abs(maneuver.Ts - setup.Ts) > 1e-15:
            raise ValueError("maneuver and controller sample times differ")
        self.maneuver = maneuver
        self.setup = setup
        self.mode = mode
        self.gains = gains if gains is not None else PidGains.zero()
        self.twin_run = twin
        self.excitation = None if excitation is None else np.asarray(excitation, dtype=float)
        if self.excitation is not None and self.excitation.size != len(maneuver):
            raise ValueError("excitation length differs from the maneuver")
        Ts = setup.Ts
        ymap = setup.static_map()
        self.twin = setup.twin_plant()
        self.twin_state = self.twin.initial_state(maneuver.v0)
        if twin is None:
            self.twin_ref = ReferenceGenerator(ymap, setup.f_ref, Ts)
            self.twin_mpc = Mpc(setup.params, setup.mpc)
        self.vehicle = setup.vehicle_plant() if mode != "mpc" else self.twin
        self.vehicle_state = self.vehicle.initial_state(maneuver.v0)
        self.sensor = Sensor.from_perturbation(setup.perturbation, Ts, rng) if mode != "mpc" else None
        if mode == "mpc-on-vehicle":
            self.vehicle_ref = ReferenceGenerator(ymap, setup.f_ref, Ts)
            self.vehicle_mpc = Mpc(setup.params, setup.mpc)
        cc = setup.compensator
        self.pid = Pid(self.gains, Ts, cc.N_D, cc.anti_windup)
        self.k = 0
        self.rows = {c: [] for c in TRACE_COLUMNS}
        self._twin_log = {"beta": [], "r": [], "vx": [], "s_act": [], "s_cmd": [], "r_ref": []}

    @property
    def done(self) -> bool:
        return self.k >= len(self.maneuver)

    def step(self) -> dict:
        """Advance both plants by one control period and return the recorded row."""
        k, man, setup = self.k, self.maneuver, self.setup
        Ts = setup.Ts
        s_ref, ax = float(man.steer[k]), float(man.accel[k])
        zeta = setup.compensator.zeta

        twin_pre = None
        if self.twin_run is not None:
            tr = self.twin_run
            t_beta, t_r, t_vx = tr.beta[k], tr.r[k], tr.vx[k]
            t_sact, s_twin, r_ref = tr.s_act[k], tr.s_cmd[k], tr.r_ref[k]
        else:
            ts = self.twin_state
            m_twin = measure(ts)
            r_ref = self.twin_ref.step(s_ref, m_twin.vx)
            s_twin = self.twin_mpc.step(m_twin, r_ref, t=k * Ts)
            t_beta, t_r, t_vx, t_sact = ts.beta, ts.r, ts.vx, ts.s_act
            twin_pre = ts
            self.twin_state = self.twin.step(ts, s_twin, ax, Ts)
        log = self._twin_log
        log["beta"].append(t_beta), log["r"].append(t_r), log["vx"].append(t_vx)
        log["s_act"].append(t_sact), log["s_cmd"].append(s_twin), log["r_ref"].append(r_ref)

        if self.mode == "mpc":
            vs = twin_pre
            meas = measure(vs)
        else:
            vs = self.vehicle_state
            meas = self.sensor.measure(vs)
        eps_twin = mixed_signal(t_r, t_beta, zeta)
        eps = mixed_signal(meas.r, meas.beta, zeta)
        y_eps = eps_twin - eps

        s_delta = 0.0
        if self.mode == "til":
            cc = setup.compensator
            if cc.saturate:
                lo, hi = delta_bounds(s_twin, meas, setup.params, cc.alpha_f_max)
            else:
                lo, hi = -math.inf, math.inf
            s_delta = self.pid.step(y_eps, lo, hi)
            s_cmd = s_twin + s_delta
        elif self.mode == "open-loop":
            if self.excitation is not None:
                s_delta = float(self.excitation[k])
            s_cmd = s_twin + s_delta
        elif self.mode == "mpc-on-vehicle":
            r_ref_v = self.vehicle_ref.step(s_ref, meas.vx)
            s_cmd = self.vehicle_mpc.step(meas, r_ref_v, t=k * Ts)
        else:
            s_cmd = s_twin

        p = self.vehicle.params
        fzf, fzr = vertical_loads(vs.vx, ax, p)
        af, ar = axle_slip_angles(vs.beta, vs.r, vs.vx, vs.s_act, p)
        row = dict(t=k * Ts, s_ref=s_ref, r_ref=r_ref, vx=vs.vx, ax=ax,
                   twin_beta=t_beta, twin_r=t_r, twin_s_cmd=s_twin, twin_s_act=t_sact,
                   beta=vs.beta, r=vs.r, beta_meas=meas.beta, r_meas=meas.r, s_cmd=s_cmd, s_act=vs.s_act,
                   s_delta=s_delta, eps_twin=eps_twin, eps=eps, y_eps=y_eps, alpha_f=af, alpha_r=ar,
                   fz_f=fzf, fz_r=fzr)
        for key, val in row.items():
            self.rows[key].append(val)

        if self.mode != "mpc":
            try:
                self.vehicle_state = self.vehicle.step(vs, s_cmd, ax, Ts)
            except SlipDomainError as exc:
                raise SimulationDiverged(f"vehicle left the tire model domain at t={k * Ts:.2f} s") from exc
            if abs(self.vehicle_state.beta) > setup.beta_divergence:
                raise SimulationDiverged(f"vehicle sideslip diverged at t={k * Ts:.2f} s")
        else:
            self.vehicle_state = self.twin_state
        self.k += 1
        return row

    def run(self) -> TilTrace:
        while not self.done:
            self.step()
        return self.trace()

    def trace(self) -> TilTrace:
        return TilTrace({c: np.array(v) for c, v in self.rows.items()}, self.setup.Ts, self.mode)

    def twin_record(self) -> TwinRun:
        log = self._twin_log
        return TwinRun(*(np.array(log[k]) for k in ("beta", "r", "vx", "s_act", "s_cmd", "r_ref")))


def til_step(loop: TilLoop) -> dict:
    return loop.step()


def run_twin(maneuver: Maneuver, setup: TilSetup = TilSetup()) -> TwinRun:
    loop = TilLoop(maneuver, setup, mode="mpc")
    loop.run()
    return loop.twin_record()


def run_til(maneuver: Maneuver, setup: TilSetup = TilSetup(), gains: Optional[PidGains] = None,
            rng: Optional[np.random.Generator] = None, twin: Optional[TwinRun] = None) -> TilTrace:
    return TilLoop(maneuver, setup, gains, rng, "til", twin).run()


def run_open_loop(maneuver: Maneuver, setup: TilSetup = TilSetup(), excitation=None,
                  rng: Optional[np.random.Generator] = None, twin: Optional[TwinRun] = None) -> TilTrace:
    return TilLoop(maneuver, setup, None, rng, "open-loop", twin, excitation).run()


def run_mpc_on_vehicle(maneuver: Maneuver, setup: TilSetup = TilSetup(), rng: Optional[np.random.Generator] = None,
                       twin: Optional[TwinRun] = None) -> TilTrace:
    return TilLoop(maneuver, setup, None, rng, "mpc-on-vehicle", twin).run()
