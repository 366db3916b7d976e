import math
from pathlib import Path

import pytest

from tilc.config import ConfigError, load_problem, problem_from_dict
from tilc.harness import TuningProblem
from tilc.params import PlantPerturbation

ROOT = Path(__file__).resolve().parents[1]


def test_shipped_config_equals_defaults():
    assert load_problem(str(ROOT / "config" / "default.toml")) == TuningProblem()


def test_no_path_gives_defaults():
    assert load_problem(None) == TuningProblem()


def test_degree_keys_converted():
    p = problem_from_dict({"problem": {"beta_max_deg": 3.0}, "mpc": {"alpha_f_max_deg": 8.0}})
    assert p.beta_max == pytest.approx(math.radians(3.0))
    assert p.setup.mpc.alpha_f_max == pytest.approx(math.radians(8.0))


def test_nested_tire_override():
    p = problem_from_dict({"vehicle": {"M": 1500.0, "rear": {"C": 25.0}}})
    assert p.setup.params.M == 1500.0
    assert p.setup.params.rear.C == 25.0
    assert p.setup.params.rear.A == 19.75


def test_perturbation_presets():
    assert problem_from_dict({"perturbation": {"preset": "none"}}).setup.perturbation == PlantPerturbation()
    p = problem_from_dict({"perturbation": {"sigma_r": 0.0, "masses": [[50.0, 0.0, 0.0]]}})
    assert p.setup.perturbation.sigma_r == 0.0
    assert p.setup.perturbation.masses[0].mass == 50.0
    with pytest.raises(ConfigError):
        problem_from_dict({"perturbation": {"preset": "other"}})


def test_search_space_and_vrft_sections():
    p = problem_from_dict({"search_space": {"k_p": [0.1, 2.0]},
                           "vrft": {"prbs_amplitude_deg": 1.0, "prbs_period": 5}})
    assert p.space.lower[0] == 0.1 and p.space.upper[0] == 2.0
    assert p.prbs_amplitude == pytest.approx(math.radians(1.0))
    assert p.prbs_period == 5


@pytest.mark.parametrize("doc", [
    {"nope": {}},
    {"mpc": {"horizon_steps": 3}},
    {"search_space": {"gain": [0, 1]}},
    {"vrft": {"amplitude": 1.0}},
    {"problem": {"smgo": {}}},
    {"compensator": {"Ts": 0.02}},
])
def test_invalid_documents_rejected(doc):
    with pytest.raises(ConfigError):
        problem_from_dict(doc)


def test_value_errors_propagate():
    with pytest.raises(ValueError):
        problem_from_dict({"mpc": {"horizon": 0}})


def test_malformed_toml(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[mpc\nhorizon = ")
    with pytest.raises(ConfigError):
        load_problem(str(bad))
