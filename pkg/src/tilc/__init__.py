"""Twin-in-the-loop yaw-rate control: vehicle model, MPC baseline, PID compensator and tuning engines."""
from .params import ActuatorParams, PlantPerturbation, TireParams, VehicleParams
from .til import CompensatorConfig, PidGains, TilSetup, run_til
from .smgo import Smgo, SmgoConfig
from .cbo import Cbo, CboConfig
from .harness import TuningProblem, compare, tune

__version__ = "0.1.0"

__all__ = ["ActuatorParams", "PlantPerturbation", "TireParams", "VehicleParams", "CompensatorConfig", "PidGains",
           "TilSetup", "run_til", "Smgo", "SmgoConfig", "Cbo", "CboConfig", "TuningProblem", "compare", "tune"]
