"""Driver inputs for the test maneuvers, sampled at the control period."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Maneuver:
    """Steer request at the wheels [rad] and longitudinal acceleration [m/s^2] per sample."""

    name: str
    steer: np.ndarray
    accel: np.ndarray
    v0: float
    Ts: float = 0.01

    def __post_init__(self):
        steer = np.asarray(self.steer, dtype=float)
        accel = np.asarray(self.accel, dtype=float)
        if steer.shape != accel.shape or steer.ndim != 1 or steer.size == 0:
            raise ValueError("steer and accel profiles must be 1-D and of equal length")
        object.__setattr__(self, "steer", steer)
        object.__setattr__(self, "accel", accel)
        if self.v0 <= 0 or np.min(self.speed) <= 0:
            raise ValueError("speed must stay positive over the whole maneuver")

    def __len__(self) -> int:
        return self.steer.size

    @property
    def duration(self) -> float:
        return self.steer.size * self.Ts

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.steer.size) * self.Ts

    @property
    def speed(self) -> np.ndarray:
        """Nominal speed at the start of each sample."""
        return self.v0 + np.concatenate([[0.0], np.cumsum(self.accel[:-1]) * self.Ts])


def double_lane_change(speed_kmh: float = 120.0, amplitude_deg: float = 3.6, step_deg: float = 3.0,
                       lead: float = 0.5, lobe_freq: float = 0.5, gap: float = 2.0, step_hold: float = 3.0,
                       Ts: float = 0.01) -> Maneuver:
    """Bi-sinusoidal lane change (two opposite lobes) followed by a step steer.

    The sinusoid spans one period at ``lobe_freq``; the step starts ``gap``
    seconds after it and is held for ``step_hold`` seconds.
    """
    period = 1.0 / lobe_freq
    total = lead + period + gap + step_hold
    t = np.arange(int(round(total / Ts))) * Ts
    a = math.radians(amplitude_deg)
    steer = np.zeros_like(t)
    lc = (t >= lead) & (t < lead + period)
    steer[lc] = a * np.sin(2 * math.pi * lobe_freq * (t[lc] - lead))
    steer[t >= lead + period + gap] = math.radians(step_deg)
    return Maneuver(f"dlc_step_{speed_kmh:g}kmh", steer, np.zeros_like(t), speed_kmh / 3.6, Ts)


def chicane(speed_kmh: float = 110.0, amplitude_deg: float = 2.5, lobe_time: float = 1.5, lead: float = 0.5,
            tail: float = 1.5, accel: float = 3.0, accel_ramp: float = 0.5, Ts: float = 0.01) -> Maneuver:
    """Left-right steer sequence; the driver accelerates from the middle of the curve."""
    total = lead + 2 * lobe_time + tail
    t = np.arange(int(round(total / Ts))) * Ts
    a = math.radians(amplitude_deg)
    steer = np.zeros_like(t)
    left = (t >= lead) & (t < lead + lobe_time)
    right = (t >= lead + lobe_time) & (t < lead + 2 * lobe_time)
    steer[left] = a * np.sin(math.pi * (t[left] - lead) / lobe_time)
    steer[right] = -a * np.sin(math.pi * (t[right] - lead - lobe_time) / lobe_time)
    mid = lead + lobe_time
    ax = np.clip((t - mid) / accel_ramp, 0.0, 1.0) * accel
    return Maneuver(f"chicane_{speed_kmh:g}kmh", steer, ax, speed_kmh / 3.6, Ts)


def step_steer(speed_kmh: float = 120.0, step_deg: float = 0.5, lead: float = 0.5, hold: float = 3.0,
               Ts: float = 0.01) -> Maneuver:
    t = np.arange(int(round((lead + hold) / Ts))) * Ts
    steer = np.where(t >= lead, math.radians(step_deg), 0.0)
    return Maneuver(f"step_{speed_kmh:g}kmh", steer, np.zeros_like(t), speed_kmh / 3.6, Ts)


def straight(speed_kmh: float = 120.0, duration: float = 2.0, Ts: float = 0.01) -> Maneuver:
    n = int(round(duration / Ts))
    return Maneuver(f"straight_{speed_kmh:g}kmh", np.zeros(n), np.zeros(n), speed_kmh / 3.6, Ts)


def library(Ts: float = 0.01) -> dict:
    """Optimization maneuver, its higher-speed validation twin, and the chicane."""
    return {
        "dlc120": double_lane_change(120.0, Ts=Ts),
        "dlc140": double_lane_change(140.0, Ts=Ts),
        "chicane": chicane(Ts=Ts),
    }
