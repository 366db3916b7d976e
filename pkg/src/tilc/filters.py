"""Discrete rational filters obtained from continuous prototypes by Tustin."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import signal


@dataclass(frozen=True)
class DiscreteFilter:
    """H(z) = b(z)/a(z), coefficients in descending powers of z, a[0] == 1."""

    b: np.ndarray
    a: np.ndarray
    Ts: float

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        # pad numerator to the denominator length so lfilter sees the same time alignment
        if b.size < a.size:
            b = np.concatenate([np.zeros(a.size - b.size), b])
        object.__setattr__(self, "b", b / a[0])
        object.__setattr__(self, "a", a / a[0])

    @property
    def poles(self) -> np.ndarray:
        return np.roots(self.a) if self.a.size > 1 else np.array([])

    @property
    def stable(self) -> bool:
        return bool(np.all(np.abs(self.poles) < 1.0))

    @property
    def dc_gain(self) -> float:
        return float(np.sum(self.b) / np.sum(self.a))

    def freqresp(self, f_hz) -> np.ndarray:
        z = np.exp(1j * 2 * math.pi * np.asarray(f_hz, dtype=float) * self.Ts)
        return np.polyval(self.b, z) / np.polyval(self.a, z)

    def apply(self, x: Sequence[float]) -> np.ndarray:
        return signal.lfilter(self.b, self.a, np.asarray(x, dtype=float))

    def __mul__(self, other: "DiscreteFilter") -> "DiscreteFilter":
        return DiscreteFilter(np.convolve(self.b, other.b), np.convolve(self.a, other.a), self.Ts)


def tustin(num, den, Ts: float, prewarp_hz: Optional[float] = None) -> DiscreteFilter:
    """Bilinear discretization, optionally prewarped to match at ``prewarp_hz``."""
    fs = 1.0 / Ts
    if prewarp_hz:
        w = 2 * math.pi * prewarp_hz
        fs = w / (2.0 * math.tan(w * Ts / 2.0))
    b, a = signal.bilinear(num, den, fs=fs)
    return DiscreteFilter(b, a, Ts)


def first_order_lowpass(f_hz: float, Ts: float, prewarp: bool = True) -> DiscreteFilter:
    w = 2 * math.pi * f_hz
    return tustin([w], [1.0, w], Ts, f_hz if prewarp else None)


def double_pole_lowpass(f_hz: float, Ts: float, prewarp: bool = True) -> DiscreteFilter:
    """Unit-gain filter w^2/(s+w)^2 with two coincident poles at ``f_hz``."""
    w = 2 * math.pi * f_hz
    return tustin([w * w], [1.0, 2 * w, w * w], Ts, f_hz if prewarp else None)


class FilterState:
    """Sample-by-sample direct-form II transposed realization of a DiscreteFilter."""

    def __init__(self, filt: DiscreteFilter):
        self.b = [float(v) for v in filt.b]
        self.a = [float(v) for v in filt.a]
        self.z = [0.0] * (len(self.a) - 1)

    def reset(self, value: float = 0.0):
        """Set the internal state to the steady state for a constant input ``value``."""
        n = len(self.z)
        if n == 0:
            return
        y = value * sum(self.b) / sum(self.a)
        # steady-state DF2T memory for constant input u and output y
        z = [0.0] * n
        for i in range(n - 1, -1, -1):
            nxt = z[i + 1] if i + 1 < n else 0.0
            z[i] = self.b[i + 1] * value - self.a[i + 1] * y + nxt
        self.z = z

    def step(self, u: float) -> float:
        b, a, z = self.b, self.a, self.z
        y = b[0] * u + (z[0] if z else 0.0)
        n = len(z)
        for i in range(n):
            nxt = z[i + 1] if i + 1 < n else 0.0
            z[i] = b[i + 1] * u - a[i + 1] * y + nxt
        return y
