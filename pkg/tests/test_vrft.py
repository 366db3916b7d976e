import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from oracles import ideal_pi_first_order
from tilc.filters import DiscreteFilter
from tilc.harness import TuningProblem, twin_run, vrft_design
from tilc.til import PidGains, TilSetup
from tilc.vrft import (DesignError, ExperimentData, FilterSpec, RankDeficientError, VrftError, bo_vrft_cost,
                       collect_open_loop, error_filter, fit_linear, fit_pid, gains_to_linear, lfsr_bits,
                       linear_to_gains, prbs, regression, vrft_cost)

TS = 0.01


# -- excitation


def test_prbs_two_levels():
    a = 0.02
    x = prbs(3000, a, 3, np.random.default_rng(0))
    assert set(np.unique(x)) == {-a, a}
    assert x.size == 3000


@pytest.mark.parametrize("order", [5, 6, 7, 9, 10, 11])
def test_lfsr_maximal_period(order):
    n = 2 ** order - 1
    bits = lfsr_bits(order, 2 * n)
    assert np.array_equal(bits[:n], bits[n:])
    # no shorter period
    for p in range(1, n):
        if n % p == 0:
            assert not np.array_equal(bits[:n - p], bits[p:n])
    assert bits[:n].sum() == 2 ** (order - 1)


def test_prbs_mean_over_one_period():
    a = 0.01
    x = prbs(511, a, 1)
    assert x.mean() == pytest.approx(-a / 511, abs=1e-15)


def test_prbs_chip_hold():
    x = prbs(100, 1.0, 10)
    assert all(np.all(x[i:i + 10] == x[i]) for i in range(0, 100, 10))


def test_prbs_rejects_bad_arguments():
    with pytest.raises(ValueError):
        prbs(0)
    with pytest.raises(ValueError):
        lfsr_bits(8, 10)
    with pytest.raises(ValueError):
        lfsr_bits(9, 10, seed=0)


# -- synthetic first-order plant, ideal PI controller


A_P, B_P, P_R = 0.9, 0.05, 0.7


def synthetic_spec():
    M_r = DiscreteFilter([0.0, 1 - P_R], [1.0, -P_R], TS)
    M_w = DiscreteFilter([1.0], [1.0], TS)
    return FilterSpec(M_r, M_w, use_derivative=False, trim=0.2)


def synthetic_data(n=2000, seed=0):
    u = np.random.default_rng(seed).normal(size=n)
    y = signal.lfilter([0.0, B_P], [1.0, -A_P], u)
    # the compensator sees y_eps = -(plant output)
    return ExperimentData(u, -y, TS)


def test_ideal_pi_recovered():
    kp, ki = ideal_pi_first_order(A_P, B_P, P_R, TS)
    theta = fit_linear(synthetic_data(), synthetic_spec())
    assert theta[0] == pytest.approx(kp, rel=1e-6)
    assert theta[1] == pytest.approx(ki, rel=1e-6)
    g = fit_pid(synthetic_data(), synthetic_spec())
    assert g.T_I == pytest.approx(kp / ki, rel=1e-6)


def test_ideal_case_cost_vanishes():
    data, spec = synthetic_data(), synthetic_spec()
    kp, ki = ideal_pi_first_order(A_P, B_P, P_R, TS)
    assert vrft_cost([kp, ki], data, spec) < 1e-10


def test_zero_data_is_rank_deficient():
    data = ExperimentData(np.zeros(500), np.zeros(500), TS)
    with pytest.raises(RankDeficientError):
        fit_pid(data, FilterSpec.default(TS))


@given(st.floats(1e-3, 1e3))
def test_joint_scaling_invariance(c):
    data, spec = synthetic_data(), synthetic_spec()
    a = fit_linear(data, spec)
    b = fit_linear(data.scaled(c), spec)
    assert np.allclose(a, b, rtol=1e-9)


def test_fit_minimizes_cost():
    data = synthetic_data(seed=1)
    data.y_eps += np.random.default_rng(2).normal(0, 0.01, data.y_eps.size)
    spec = synthetic_spec()
    theta = fit_linear(data, spec)
    c0 = vrft_cost(theta, data, spec)
    rng = np.random.default_rng(3)
    for _ in range(100):
        assert c0 <= vrft_cost(theta * (1 + 0.2 * rng.normal(size=theta.size)), data, spec)


@settings(max_examples=25)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=2), st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_cost_quadratic_on_lines(t0, d):
    data, spec = synthetic_data(600), synthetic_spec()
    t0, d = np.array(t0), np.array(d)
    c = [vrft_cost(t0 + s * d, data, spec) for s in (-1.0, 0.0, 1.0)]
    # fit a parabola through three points and predict a fourth
    a2 = 0.5 * (c[0] + c[2]) - c[1]
    a1 = 0.5 * (c[2] - c[0])
    pred = a2 * 4 + a1 * 2 + c[1]
    assert vrft_cost(t0 + 2 * d, data, spec) == pytest.approx(pred, rel=1e-8, abs=1e-12)


def test_gain_mapping_round_trip():
    g = PidGains(0.3, 0.2, 0.04)
    back = linear_to_gains(gains_to_linear(g))
    assert back.k_p == pytest.approx(0.3) and back.T_I == pytest.approx(0.2) and back.T_D == pytest.approx(0.04)
    with pytest.raises(DesignError):
        linear_to_gains([0.3, -0.1, 0.0])
    with pytest.raises(DesignError):
        linear_to_gains([0.3, 0.1, -0.01])


def test_default_filter_realization_inverts_reference_model():
    spec = FilterSpec.default(TS)
    x = np.random.default_rng(0).normal(size=3000)
    y = spec.M_r.apply(x)
    b, a, delay = error_filter(spec)
    # (M_w (1 - M_r) / M_r) y + M_w y = M_w x
    e = signal.lfilter(b, a, y)
    lhs = e[delay:] + spec.M_w.apply(y)[:y.size - delay]
    rhs = spec.M_w.apply(x)[:y.size - delay]
    k0 = 100
    assert np.max(np.abs(lhs[k0:] - rhs[k0:])) < 1e-8


def test_mismatched_sample_time_rejected():
    data = ExperimentData(np.ones(300), np.ones(300), 0.02)
    with pytest.raises(VrftError):
        regression(data, FilterSpec.default(TS))


def test_experiment_csv_round_trip(tmp_path):
    data = synthetic_data(50)
    data.to_csv(tmp_path / "exp.csv")
    back = ExperimentData.from_csv(tmp_path / "exp.csv")
    assert np.array_equal(back.s_delta, data.s_delta) and np.array_equal(back.y_eps, data.y_eps)
    assert back.Ts == pytest.approx(TS)


# -- BO-style VRFT cost


def test_bo_vrft_cost_properties():
    spec = FilterSpec.default(TS)
    assert bo_vrft_cost(np.zeros(100), spec) == 0.0
    y = np.random.default_rng(0).normal(size=400)
    assert bo_vrft_cost(3 * y, spec) == pytest.approx(9 * bo_vrft_cost(y, spec), rel=1e-12)
    unit = FilterSpec(DiscreteFilter([1.0], [1.0], TS), DiscreteFilter([1.0], [1.0], TS))
    assert bo_vrft_cost(y, unit) == pytest.approx(np.mean(y * y), rel=1e-14)


# -- vehicle experiment


@pytest.fixture(scope="module")
def problem():
    return TuningProblem()


def test_zero_excitation_identical_plants_zero_error(problem):
    setup = TilSetup().identical_plants()
    man = problem.get_maneuver()
    data, _ = collect_open_loop(man, setup, None, None, twin_run(problem.maneuver, setup))
    assert np.all(data.y_eps == 0.0)


def test_excitation_energy_below_actuator_band(problem):
    man = problem.get_maneuver()
    setup = TilSetup().identical_plants()
    ex = prbs(len(man), problem.prbs_amplitude, problem.prbs_period, np.random.default_rng(0))
    data, _ = collect_open_loop(man, setup, ex, None, twin_run(problem.maneuver, setup))
    f, pxx = signal.welch(data.y_eps, fs=1 / TS, nperseg=256)
    cutoff = 33.8 / (2 * math.pi)
    assert pxx[f <= cutoff].sum() > 0.9 * pxx.sum()


def test_doubling_amplitude_doubles_response(problem):
    man = problem.get_maneuver()
    setup = problem.setup
    twin = twin_run(problem.maneuver, setup)
    ex = prbs(len(man), math.radians(1.0), problem.prbs_period, np.random.default_rng(5))
    runs = [collect_open_loop(man, setup, c * ex, np.random.default_rng(9), twin)[0].y_eps for c in (0.0, 1.0, 2.0)]
    d1 = np.linalg.norm(runs[1] - runs[0])
    d2 = np.linalg.norm(runs[2] - runs[0])
    assert d2 / d1 == pytest.approx(2.0, rel=0.2)


def test_vehicle_design_positive_gains(problem):
    g = vrft_design(problem, 0).gains
    assert g.k_p > 0 and g.T_I > 0 and g.T_D >= 0
    assert problem.space.contains(np.array(g.as_tuple()))


def test_gains_spread_across_excitation_seeds(problem):
    G = np.array([vrft_design(problem, s).gains.as_tuple() for s in range(5)])
    spread = (G.max(axis=0) - G.min(axis=0)) / np.abs(G.mean(axis=0))
    assert np.all(spread <= 0.15), f"relative spread k_p, T_I, T_D = {np.round(spread, 3)}"
