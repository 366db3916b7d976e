"""Yaw-rate reference from the driver steer request.

A speed-scheduled static map (steady-state yaw rate of the nominal twin,
saturated at the largest attainable value) followed by a unit-gain
two-pole low-pass filter.
"""
from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Tuple

import numpy as np

from .dynamics import SlipDomainError, SteadyStateError, axle_slip_angles, steady_state
from .filters import DiscreteFilter, FilterState, double_pole_lowpass
from .params import VehicleParams

DEFAULT_SPEEDS_KMH = tuple(range(30, 221, 10))
DEFAULT_STEERS_DEG = tuple(0.25 * i for i in range(81))


@dataclass(frozen=True)
class StaticYawMap:
    speeds: Tuple[float, ...]  # m/s, strictly increasing
    steers: Tuple[float, ...]  # rad, strictly increasing, starts at 0
    table: Tuple[Tuple[float, ...], ...]  # yaw rate [rad/s], table[i][j] at speeds[i], steers[j]

    def as_array(self) -> np.ndarray:
        return np.array(self.table)

    def max_yaw_rate(self, vx: float) -> float:
        return abs(static_reference(self, self.steers[-1], vx))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["speed_mps", "steer_rad", "yaw_rate_radps"])
            for i, v in enumerate(self.speeds):
                for j, s in enumerate(self.steers):
                    w.writerow([repr(v), repr(s), repr(self.table[i][j])])

    @classmethod
    def from_csv(cls, path) -> "StaticYawMap":
        rows = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append((float(row["speed_mps"]), float(row["steer_rad"]), float(row["yaw_rate_radps"])))
        speeds = tuple(sorted({r[0] for r in rows}))
        steers = tuple(sorted({r[1] for r in rows}))
        lookup = {(r[0], r[1]): r[2] for r in rows}
        table = tuple(tuple(lookup[(v, s)] for s in steers) for v in speeds)
        return cls(speeds, steers, table)


def _check_grid(values, name):
    if len(values) < 2 or any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} grid must be strictly increasing with at least two nodes")


def build_static_map(params: VehicleParams = VehicleParams(),
                     speeds: Sequence[float] = tuple(v / 3.6 for v in DEFAULT_SPEEDS_KMH),
                     steers: Sequence[float] = tuple(math.radians(s) for s in DEFAULT_STEERS_DEG)) -> StaticYawMap:
    """Steady-state yaw rate of the twin over a (speed, steer) grid.

    Each speed row is solved by continuation in steer. Once the front axle
    passes its force peak the attainable yaw rate stops growing; the row is
    then held at its running maximum.
    """
    return _build_static_map(params, tuple(float(v) for v in speeds), tuple(float(s) for s in steers))


@lru_cache(maxsize=8)
def _build_static_map(params, speeds, steers):
    _check_grid(speeds, "speed")
    _check_grid(steers, "steer")
    if speeds[0] <= 0:
        raise ValueError("speeds must be positive")
    if steers[0] != 0.0:
        raise ValueError("steer grid must start at 0 (negative side follows by symmetry)")
    peak = params.front.peak_slip
    table = []
    for v in speeds:
        row, guess, best, saturated = [], (0.0, 0.0), 0.0, False
        for s in steers:
            if not saturated:
                try:
                    beta, r = steady_state(params, s, v, guess)
                    guess = (beta, r)
                    af, _ = axle_slip_angles(beta, r, v, s, params)
                    if abs(af) >= peak:
                        saturated = r <= best
                    best = max(best, r)
                except (SteadyStateError, SlipDomainError) as exc:
                    af, _ = axle_slip_angles(guess[0], guess[1], v, s, params)
                    if abs(af) < 0.8 * peak:
                        raise SteadyStateError(
                            f"steady state failed at speed={v:.4g} m/s, steer={s:.6g} rad") from exc
                    saturated = True
            row.append(best)
        table.append(tuple(row))
    return StaticYawMap(speeds, steers, tuple(table))


def static_reference(ymap: StaticYawMap, s_ref: float, vx: float) -> float:
    """Bilinear lookup, odd in steer; speed and steer are clamped to the grid hull."""
    sign = -1.0 if s_ref < 0 else 1.0
    s = min(abs(s_ref), ymap.steers[-1])
    v = min(max(vx, ymap.speeds[0]), ymap.speeds[-1])
    i, wi = _bracket(ymap.speeds, v)
    j, wj = _bracket(ymap.steers, s)
    t = ymap.table
    lo = (1 - wj) * t[i][j] + wj * t[i][j + 1]
    hi = (1 - wj) * t[i + 1][j] + wj * t[i + 1][j + 1]
    return sign * ((1 - wi) * lo + wi * hi)


def _bracket(grid, x):
    k = bisect.bisect_right(grid, x) - 1
    k = min(max(k, 0), len(grid) - 2)
    w = (x - grid[k]) / (grid[k + 1] - grid[k])
    return k, w


class RefFilter:
    """Two coincident poles at ``f_ref`` Hz, unit DC gain, Tustin at ``Ts``."""

    def __init__(self, f_ref: float = 6.3, Ts: float = 0.01):
        self.f_ref = f_ref
        self.filter: DiscreteFilter = double_pole_lowpass(f_ref, Ts)
        self._state = FilterState(self.filter)

    def reset(self, value: float = 0.0):
        self._state.reset(value)

    def step(self, r_static: float) -> float:
        return self._state.step(r_static)


def filter_step(filt: RefFilter, r_static: float) -> float:
    return filt.step(r_static)


class ReferenceGenerator:
    def __init__(self, ymap: StaticYawMap, f_ref: float = 6.3, Ts: float = 0.01):
        self.map = ymap
        self.filter = RefFilter(f_ref, Ts)

    def step(self, s_ref: float, vx: float) -> float:
        return self.filter.step(static_reference(self.map, s_ref, vx))
