"""Physical parameter sets for the single-track plant.

Defaults are the values of the simplified model of the reference car
(two-seat high-performance vehicle). Angles are stored in radians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Tuple

from scipy import signal

G = 9.81


@dataclass(frozen=True)
class TireParams:
    """Shape coefficients of the simplified magic formula for one axle."""

    A: float
    B: float
    C: float

    def __post_init__(self):
        if not (self.A > 0 and self.B > 0 and self.C > 0):
            raise ValueError(f"tire coefficients must be positive, got {self}")

    @property
    def peak_slip(self) -> float:
        """Slip angle [rad] at which the lateral force magnitude peaks.

        For ``B <= 1`` the curve saturates without a peak and pi/2 is returned.
        """
        if self.B <= 1.0:
            return math.pi / 2
        return math.atan(math.tan(math.pi / (2.0 * self.B)) / self.A)


@dataclass(frozen=True)
class VehicleParams:
    M: float = 1729.1
    J_zz: float = 2482.7
    L_f: float = 1.48
    L_r: float = 1.16
    k_a_f: float = 0.065
    k_a_r: float = 0.221
    k_x: float = 153.63
    g: float = G
    front: TireParams = TireParams(10.72, 1.51, 20.08)
    rear: TireParams = TireParams(19.75, 0.75, 28.69)

    def __post_init__(self):
        for name in ("M", "J_zz", "L_f", "L_r", "k_a_f", "k_a_r", "k_x", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def wheelbase(self) -> float:
        return self.L_f + self.L_r


@dataclass(frozen=True)
class ActuatorParams:
    """Steer-by-wire actuator: third-order closed loop, rate limit, saturation."""

    num: Tuple[float, ...] = (58.34, 1547.0, 9137.0)
    den: Tuple[float, ...] = (1.002, 64.55, 1549.0, 9137.0)
    omega_act: float = 33.8
    rate_max: float = math.radians(100.0)
    s_max: float = math.radians(20.0)

    def __post_init__(self):
        if not (self.rate_max > 0 and self.s_max > 0 and self.omega_act > 0):
            raise ValueError("actuator limits and bandwidth must be positive")

    def discretize(self, dt: float):
        """Zero-order-hold state-space matrices (Ad, Bd, Cd, Dd) of the transfer function."""
        return _actuator_zoh(self.num, self.den, dt)


_ZOH_CACHE: dict = {}


def _actuator_zoh(num, den, dt):
    key = (num, den, dt)
    if key not in _ZOH_CACHE:
        A, B, C, D = signal.tf2ss(num, den)
        Ad, Bd, Cd, Dd, _ = signal.cont2discrete((A, B, C, D), dt, method="zoh")
        _ZOH_CACHE[key] = (
            [[float(v) for v in row] for row in Ad],
            [float(v) for v in Bd[:, 0]],
            [float(v) for v in Cd[0]],
            float(Dd[0, 0]),
        )
    return _ZOH_CACHE[key]


@dataclass(frozen=True)
class AddedMass:
    mass: float
    x: float  # longitudinal offset from the nominal CoM, forward positive [m]
    y: float  # lateral offset [m]


DEFAULT_MASSES = (
    AddedMass(100.0, 0.0, -0.35),  # passenger
    AddedMass(70.0, 1.2, -0.5),  # front trunk, left
    AddedMass(10.0, 1.2, 0.5),  # front trunk, right
)


@dataclass(frozen=True)
class PlantPerturbation:
    """Differences between the twin and the physical vehicle.

    ``relaxation_length`` of 0 disables the first-order tire force lag.
    ``beta_noise_cutoff`` is the corner of the first-order low-pass that
    colours the sideslip noise; sigmas are post-filter standard deviations.
    """

    masses: Tuple[AddedMass, ...] = ()
    rear_stiffness_scale: float = 1.0
    relaxation_length: float = 0.0
    sigma_r: float = 0.0
    sigma_beta: float = 0.0
    beta_noise_cutoff: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.rear_stiffness_scale <= 1.0:
            raise ValueError("rear stiffness scale must lie in (0, 1]")
        if self.sigma_r < 0 or self.sigma_beta < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if self.relaxation_length < 0:
            raise ValueError("relaxation length must be non-negative")

    @classmethod
    def loaded_vehicle(cls) -> "PlantPerturbation":
        """Added loads, softer rear tires, tire lag and sensor noise."""
        return cls(
            masses=DEFAULT_MASSES,
            rear_stiffness_scale=0.85,
            relaxation_length=0.3,
            sigma_r=0.006,
            sigma_beta=0.0044,
        )

    @property
    def is_null(self) -> bool:
        return (
            not self.masses
            and self.rear_stiffness_scale == 1.0
            and self.relaxation_length == 0.0
            and self.sigma_r == 0.0
            and self.sigma_beta == 0.0
        )


def apply_perturbation(params: VehicleParams, pert: PlantPerturbation) -> VehicleParams:
    """Return vehicle parameters with added point masses and scaled rear tires.

    Point masses shift the centre of mass along the wheelbase, add their
    parallel-axis yaw inertia, and scale the load-transfer coefficient with
    total mass (CoM height assumed unchanged).
    """
    out = params
    if pert.masses:
        m0 = params.M
        m_add = sum(p.mass for p in pert.masses)
        m_new = m0 + m_add
        xc = sum(p.mass * p.x for p in pert.masses) / m_new
        yc = sum(p.mass * p.y for p in pert.masses) / m_new
        lf, lr = params.L_f - xc, params.L_r + xc
        if lf <= 0 or lr <= 0:
            raise ValueError(f"perturbed centre of mass leaves the wheelbase (shift {xc:.3f} m)")
        J = params.J_zz + m0 * (xc**2 + yc**2)
        J += sum(p.mass * ((p.x - xc) ** 2 + (p.y - yc) ** 2) for p in pert.masses)
        out = replace(out, M=m_new, J_zz=J, L_f=lf, L_r=lr, k_x=params.k_x * m_new / m0)
    if pert.rear_stiffness_scale != 1.0:
        rear = out.rear
        out = replace(out, rear=replace(rear, C=rear.C * pert.rear_stiffness_scale))
    return out
