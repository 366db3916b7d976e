"""Virtual Reference Feedback Tuning of the TiL compensator from one open-loop experiment.

Sign convention: y_eps is twin minus vehicle, so the output of the plant
seen by the compensator (s_delta -> vehicle mixed signal) is -y_eps. The
virtual error is therefore built from -y_eps and the fitted gains come out
positive for a plant that turns more when steered more.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import signal

from .filters import DiscreteFilter, double_pole_lowpass, first_order_lowpass
from .maneuvers import Maneuver
from .til import PidGains, TilSetup, TilTrace, TwinRun, run_open_loop


class VrftError(ValueError):
    pass


class RankDeficientError(VrftError):
    """The regressor matrix does not have full column rank (insufficient excitation)."""


class DesignError(VrftError):
    """The least-squares controller does not map to a valid PID (negative T_I or T_D)."""


@dataclass(frozen=True)
class FilterSpec:
    """Reference model M_r and data filter M_w, plus the fitting options."""

    M_r: DiscreteFilter
    M_w: DiscreteFilter
    derivative_tau: float = 0.01
    trim: float = 1.0
    use_derivative: bool = True

    def __post_init__(self):
        if not (self.M_r.stable and self.M_w.stable):
            raise ValueError("reference model and data filter must be stable")
        if abs(self.M_r.dc_gain - 1.0) > 1e-9:
            raise ValueError("reference model must have unit DC gain")
        if abs(self.M_r.Ts - self.M_w.Ts) > 1e-15:
            raise ValueError("filters use different sample times")

    @property
    def Ts(self) -> float:
        return self.M_r.Ts

    @classmethod
    def default(cls, Ts: float = 0.01, f_r: float = 3.5, f_w: float = 6.3, **kw) -> "FilterSpec":
        return cls(first_order_lowpass(f_r, Ts), double_pole_lowpass(f_w, Ts), **kw)


@dataclass
class ExperimentData:
    s_delta: np.ndarray
    y_eps: np.ndarray
    Ts: float = 0.01

    def __post_init__(self):
        self.s_delta = np.asarray(self.s_delta, dtype=float).ravel()
        self.y_eps = np.asarray(self.y_eps, dtype=float).ravel()
        if self.s_delta.size != self.y_eps.size:
            raise ValueError("input and output records differ in length")

    def __len__(self) -> int:
        return self.s_delta.size

    def scaled(self, c: float) -> "ExperimentData":
        return ExperimentData(c * self.s_delta, c * self.y_eps, self.Ts)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "s_delta", "y_eps"])
            for k, (u, y) in enumerate(zip(self.s_delta, self.y_eps)):
                w.writerow([repr(k * self.Ts), repr(float(u)), repr(float(y))])

    @classmethod
    def from_csv(cls, path) -> "ExperimentData":
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        Ts = float(arr[1, 0] - arr[0, 0]) if arr.shape[0] > 1 else 0.01
        return cls(arr[:, 1], arr[:, 2], Ts)


# ---------------------------------------------------------------------------
# excitation

# feedback taps of maximal-length Fibonacci registers, x^n + x^k + 1
_LFSR_TAPS = {5: 3, 6: 5, 7: 6, 8: None, 9: 5, 10: 7, 11: 9}


def lfsr_bits(order: int, n_bits: int, seed: int = 1) -> np.ndarray:
    tap = _LFSR_TAPS.get(order)
    if tap is None:
        raise ValueError(f"no two-tap maximal register of order {order}")
    mask = (1 << order) - 1
    state = seed & mask
    if state == 0:
        raise ValueError("register seed must be nonzero")
    out = np.empty(n_bits, dtype=np.int8)
    for i in range(n_bits):
        out[i] = state & 1
        fb = (state ^ (state >> (order - tap))) & 1
        state = (state >> 1) | (fb << (order - 1))
    return out


def prbs(n: int, amplitude: float = math.radians(0.5), period: int = 2,
         rng: Optional[np.random.Generator] = None, order: int = 9) -> np.ndarray:
    """Two-level m-sequence, each chip held ``period`` samples; bit 1 maps to -amplitude."""
    if n <= 0 or period < 1:
        raise ValueError("need n > 0 and period >= 1")
    seed = 1 if rng is None else int(rng.integers(1, 1 << order))
    bits = lfsr_bits(order, -(-n // period), seed)
    return np.repeat(np.where(bits == 1, -amplitude, amplitude), period)[:n].astype(float)


def collect_open_loop(maneuver: Maneuver, setup: TilSetup = TilSetup(), excitation: Optional[Sequence[float]] = None,
                      rng: Optional[np.random.Generator] = None, twin: Optional[TwinRun] = None,
                      ) -> Tuple[ExperimentData, TilTrace]:
    """Run the maneuver with the compensator opened and ``excitation`` added to the twin command."""
    if excitation is None:
        excitation = np.zeros(len(maneuver))
    trace = run_open_loop(maneuver, setup, excitation, rng, twin)
    return ExperimentData(trace.s_delta, trace.y_eps, setup.Ts), trace


# ---------------------------------------------------------------------------
# fitting


def _strip_root(poly: np.ndarray, root: float, tol: float = 1e-9):
    q, r = np.polydiv(poly, np.array([1.0, -root]))
    if np.max(np.abs(r)) <= tol * max(1.0, np.max(np.abs(poly))):
        return q, True
    return poly, False


def error_filter(spec: FilterSpec) -> Tuple[np.ndarray, np.ndarray, int]:
    """Coefficients (z^-1 form) of M_w (1 - M_r) / M_r with common z = -1 factors cancelled.

    Returns (b, a, delay): when the combination is improper the leading
    zeros of a are dropped and the realized output is ``delay`` samples late.
    """
    br, ar = spec.M_r.b, spec.M_r.a
    num = np.convolve(spec.M_w.b, ar - br)
    den = np.convolve(spec.M_w.a, br)
    # Tustin prototypes put the zeros of M_r (poles here) and of M_w at z = -1
    while abs(np.polyval(den, -1.0)) <= 1e-12 * np.max(np.abs(den)):
        num2, ok_n = _strip_root(num, -1.0)
        den2, ok_d = _strip_root(den, -1.0)
        if not (ok_n and ok_d):
            raise VrftError("reference-model zero at z = -1 is not cancelled by the data filter")
        num, den = num2, den2
    delay = 0
    while den.size > 1 and abs(den[0]) < 1e-12 * np.max(np.abs(den)):
        den = den[1:]
        delay += 1
    if den.size > 1 and np.any(np.abs(np.roots(den)) >= 1.0):
        raise VrftError("error filter is unstable")
    return num, den, delay


def pid_basis(e: np.ndarray, Ts: float, tau: float, use_derivative: bool = True) -> np.ndarray:
    """Columns [e, Tustin integral of e, Tustin filtered derivative s/(1+tau s) of e]."""
    cols = [e, signal.lfilter([Ts / 2, Ts / 2], [1.0, -1.0], e)]
    if use_derivative:
        cols.append(signal.lfilter([2.0, -2.0], [2 * tau + Ts, Ts - 2 * tau], e))
    return np.column_stack(cols)


def regression(data: ExperimentData, spec: FilterSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Filtered regressor matrix and target, transient trimmed."""
    if abs(data.Ts - spec.Ts) > 1e-12:
        raise VrftError("data and filters use different sample times")
    b, a, delay = error_filter(spec)
    e_v = signal.lfilter(b, a, -data.y_eps)
    target = spec.M_w.apply(data.s_delta)
    if delay:
        target = np.concatenate([np.zeros(delay), target[:-delay]])
    Phi = pid_basis(e_v, data.Ts, spec.derivative_tau, spec.use_derivative)
    k0 = int(round(spec.trim / data.Ts)) + delay
    n_par = Phi.shape[1]
    if data.s_delta.size - k0 < n_par + 1:
        raise VrftError(f"experiment too short: {data.s_delta.size} samples, {k0} trimmed")
    return Phi[k0:], target[k0:]


def fit_linear(data: ExperimentData, spec: FilterSpec) -> np.ndarray:
    """Least-squares [k_p, k_i, k_d] (k_d omitted without derivative)."""
    Phi, target = regression(data, spec)
    scale = np.linalg.norm(Phi, axis=0)
    if np.any(scale == 0) or not np.all(np.isfinite(scale)):
        raise RankDeficientError("a regressor column is identically zero")
    sol, _, rank, sv = np.linalg.lstsq(Phi / scale, target, rcond=None)
    if rank < Phi.shape[1] or sv[-1] < 1e-10 * sv[0]:
        raise RankDeficientError(f"regressor matrix has rank {rank} of {Phi.shape[1]}")
    return sol / scale


def linear_to_gains(theta: Sequence[float]) -> PidGains:
    kp, ki = float(theta[0]), float(theta[1])
    kd = float(theta[2]) if len(theta) > 2 else 0.0
    if kp <= 0:
        raise DesignError(f"non-positive proportional gain {kp:.4g}")
    if ki < 0:
        raise DesignError(f"negative integral gain {ki:.4g} gives T_I < 0")
    if kd < 0:
        raise DesignError(f"negative derivative gain {kd:.4g} gives T_D < 0")
    T_I = math.inf if ki == 0 else kp / ki
    return PidGains(kp, T_I, kd / kp)


def gains_to_linear(gains: PidGains, use_derivative: bool = True) -> np.ndarray:
    ki = 0.0 if math.isinf(gains.T_I) else gains.k_p / gains.T_I
    theta = [gains.k_p, ki, gains.k_p * gains.T_D]
    return np.array(theta if use_derivative else theta[:2])


def fit_pid(data: ExperimentData, spec: FilterSpec) -> PidGains:
    return linear_to_gains(fit_linear(data, spec))


def vrft_cost(gains: Union[PidGains, Sequence[float]], data: ExperimentData, spec: FilterSpec) -> float:
    """Mean squared mismatch between the filtered input and the controller's virtual-error response."""
    theta = gains_to_linear(gains, spec.use_derivative) if isinstance(gains, PidGains) else np.asarray(gains, float)
    Phi, target = regression(data, spec)
    res = target - Phi @ theta
    return float(np.mean(res * res))


def bo_vrft_cost(trace: Union[TilTrace, Sequence[float]], spec: FilterSpec) -> float:
    """Mean square of the closed-loop error filtered by M_w M_r."""
    y = trace.y_eps if isinstance(trace, TilTrace) else np.asarray(trace, dtype=float)
    yf = (spec.M_w * spec.M_r).apply(y)
    return float(np.mean(yf * yf))
