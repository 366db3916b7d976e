"""Experiment configuration from a TOML file.

Every section is optional and maps onto one dataclass; unknown keys are
rejected. Keys ending in ``_deg`` are given in degrees (deg/s for rates)
and converted to radians.
"""
from __future__ import annotations

import math
from dataclasses import fields, replace
from typing import Any, Dict, Optional

try:
    import tomllib as tomli
except ImportError:  # Python < 3.11
    import tomli

from .cbo import CboConfig
from .harness import TuningProblem, default_space
from .mpc import MpcConfig
from .params import ActuatorParams, AddedMass, PlantPerturbation, TireParams, VehicleParams
from .smgo import SmgoConfig
from .space import SearchSpace
from .til import CompensatorConfig, TilSetup


class ConfigError(ValueError):
    pass


def _convert(section: str, table: Dict[str, Any], allowed) -> Dict[str, Any]:
    out = {}
    names = {f.name for f in fields(allowed)}
    for key, val in table.items():
        name = key[:-4] if key.endswith("_deg") else key
        if name not in names:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        if key.endswith("_deg"):
            val = math.radians(float(val))
        elif isinstance(val, list):
            val = tuple(val)
        out[name] = val
    return out


def _vehicle(table: Dict[str, Any]) -> VehicleParams:
    table = dict(table)
    tires = {}
    for axle in ("front", "rear"):
        if axle in table:
            t = table.pop(axle)
            base = getattr(VehicleParams(), axle)
            tires[axle] = replace(base, **_convert(f"vehicle.{axle}", t, TireParams))
    return replace(VehicleParams(), **_convert("vehicle", table, VehicleParams), **tires)


def _perturbation(table: Dict[str, Any]) -> PlantPerturbation:
    table = dict(table)
    preset = table.pop("preset", "loaded")
    if preset == "loaded":
        base = PlantPerturbation.loaded_vehicle()
    elif preset == "none":
        base = PlantPerturbation()
    else:
        raise ConfigError(f"[perturbation] unknown preset {preset!r}")
    masses = table.pop("masses", None)
    kw = _convert("perturbation", table, PlantPerturbation)
    if masses is not None:
        kw["masses"] = tuple(AddedMass(float(m), float(x), float(y)) for m, x, y in masses)
    return replace(base, **kw)


def _space(table: Dict[str, Any]) -> SearchSpace:
    base = default_space()
    lo, hi = list(base.lower), list(base.upper)
    for i, key in enumerate(("k_p", "T_I", "T_D")):
        if key in table:
            lo[i], hi[i] = (float(v) for v in table[key])
    unknown = set(table) - {"k_p", "T_I", "T_D"}
    if unknown:
        raise ConfigError(f"[search_space] unknown keys {sorted(unknown)}")
    return SearchSpace(tuple(lo), tuple(hi), base.log, base.names)


SECTIONS = ("vehicle", "actuator", "perturbation", "mpc", "compensator", "problem", "search_space", "vrft",
            "smgo", "cbo")


def problem_from_dict(doc: Dict[str, Any]) -> TuningProblem:
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    setup = TilSetup(
        params=_vehicle(doc.get("vehicle", {})),
        perturbation=_perturbation(doc.get("perturbation", {})),
        actuator=replace(ActuatorParams(), **_convert("actuator", doc.get("actuator", {}), ActuatorParams)),
        mpc=replace(MpcConfig(), **_convert("mpc", doc.get("mpc", {}), MpcConfig)),
        compensator=replace(CompensatorConfig(), **_convert("compensator", doc.get("compensator", {}),
                                                            CompensatorConfig)),
    )
    if abs(setup.mpc.Ts - setup.compensator.Ts) > 1e-15:
        raise ConfigError("mpc and compensator sample times differ")
    kw = _convert("problem", doc.get("problem", {}), TuningProblem)
    for key in ("space", "setup", "smgo", "cbo"):
        if key in kw:
            raise ConfigError(f"[problem] {key!r} has its own section")
    vrft = doc.get("vrft", {})
    vmap = {"f_r": "vrft_f_r", "f_w": "vrft_f_w", "prbs_amplitude_deg": "prbs_amplitude_deg",
            "prbs_period": "prbs_period", "prbs_order": "prbs_order"}
    for key, val in vrft.items():
        if key not in vmap:
            raise ConfigError(f"[vrft] unknown key {key!r}")
        if key.endswith("_deg"):
            kw["prbs_amplitude"] = math.radians(float(val))
        else:
            kw[vmap[key]] = val
    return TuningProblem(
        space=_space(doc.get("search_space", {})),
        setup=setup,
        smgo=replace(SmgoConfig(), **_convert("smgo", doc.get("smgo", {}), SmgoConfig)),
        cbo=replace(CboConfig(), **_convert("cbo", doc.get("cbo", {}), CboConfig)),
        **kw,
    )


def load_problem(path: Optional[str] = None) -> TuningProblem:
    if path is None:
        return TuningProblem()
    with open(path, "rb") as fh:
        try:
            doc = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return problem_from_dict(doc)
