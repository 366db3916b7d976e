"""Box-bounded search spaces mapped to the unit cube."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class SearchSpace:
    """Per-dimension bounds; ``log`` dimensions are scaled logarithmically."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    log: Tuple[bool, ...] = ()
    names: Tuple[str, ...] = ()

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ValueError("bounds must be non-empty and of equal length")
        log = tuple(self.log) if self.log else (False,) * len(lo)
        if len(log) != len(lo):
            raise ValueError("log flags do not match the dimension")
        for a, b, lg in zip(lo, hi, log):
            if not (np.isfinite(a) and np.isfinite(b) and a < b):
                raise ValueError(f"invalid interval [{a}, {b}]")
            if lg and a <= 0:
                raise ValueError("log-scaled bounds must be positive")
        names = tuple(self.names) if self.names else tuple(f"x{i}" for i in range(len(lo)))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "log", log)
        object.__setattr__(self, "names", names)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def _ends(self):
        lo = np.array([np.log(a) if lg else a for a, lg in zip(self.lower, self.log)])
        hi = np.array([np.log(b) if lg else b for b, lg in zip(self.upper, self.log)])
        return lo, hi

    def to_unit(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        lo, hi = self._ends()
        t = np.where(self.log, np.log(np.maximum(theta, 1e-300)), theta)
        return (t - lo) / (hi - lo)

    def from_unit(self, u) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        lo, hi = self._ends()
        t = lo + u * (hi - lo)
        theta = np.where(self.log, np.exp(t), t)
        # exact bounds at the faces despite exp/log round-off
        return np.clip(theta, self.lower, self.upper)

    def contains(self, theta, tol: float = 1e-12) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= np.array(self.lower) - tol) and np.all(theta <= np.array(self.upper) + tol))


def unit_box(dim: int) -> SearchSpace:
    return SearchSpace((0.0,) * dim, (1.0,) * dim)


def distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix; exactly zero between coincident points."""
    return cdist(np.atleast_2d(A), np.atleast_2d(B))
