import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enumerate_qp, random_qp
from tilc.qp import QpDegenerate, QpInfeasible, QpMaxIterations, kkt_residuals, solve_qp


def box(n):
    return np.vstack([np.eye(n), -np.eye(n)]), np.ones(2 * n)


def test_min_norm_in_box_is_origin():
    G, h = box(4)
    sol = solve_qp(np.eye(4), np.zeros(4), G, h)
    assert np.allclose(sol.x, 0.0, atol=1e-14)
    assert sol.active == ()


def test_unconstrained_optimum_feasible():
    G, h = box(2)
    sol = solve_qp(2 * np.eye(2), np.array([-2.0, 0.0]), G, h)
    assert np.allclose(sol.x, [1.0, 0.0], atol=1e-12)


def test_active_bound():
    G, h = box(2)
    sol = solve_qp(2 * np.eye(2), np.array([-6.0, 4.0]), G, h)
    assert np.allclose(sol.x, [1.0, -1.0], atol=1e-12)
    assert sol.multipliers[0] == pytest.approx(4.0, abs=1e-10)
    assert sol.multipliers[3] == pytest.approx(2.0, abs=1e-10)


@settings(max_examples=80)
@given(st.integers(0, 2 ** 32 - 1))
def test_random_qps_match_enumeration(seed):
    rng = np.random.default_rng(seed)
    H, f, G, h = random_qp(rng)
    x_ref, obj_ref = enumerate_qp(H, f, G, h)
    sol = solve_qp(H, f, G, h)
    assert sol.objective == pytest.approx(obj_ref, abs=1e-8 * (1 + abs(obj_ref)))
    assert sol.max_residual < 1e-8


@settings(max_examples=40)
@given(st.integers(0, 2 ** 32 - 1))
def test_warm_start_keeps_optimum(seed):
    rng = np.random.default_rng(seed)
    H, f, G, h = random_qp(rng)
    cold = solve_qp(H, f, G, h)
    warm = solve_qp(H, f, G, h, x0=cold.x, active0=cold.active)
    assert np.allclose(warm.x, cold.x, atol=1e-8)
    assert warm.iterations <= cold.iterations


def test_kkt_residuals_at_known_solution():
    G, h = box(2)
    H, f = 2 * np.eye(2), np.array([-6.0, 4.0])
    res = kkt_residuals(H, f, G, h, np.array([1.0, -1.0]), np.array([4.0, 0.0, 0.0, 2.0]))
    assert max(res.values()) == 0.0


def test_infeasible_raises():
    G = np.array([[1.0], [-1.0]])
    h = np.array([-1.0, -1.0])  # x <= -1 and x >= 1
    with pytest.raises(QpInfeasible):
        solve_qp(np.eye(1), np.zeros(1), G, h)


def test_indefinite_hessian_raises():
    G, h = box(2)
    with pytest.raises(QpDegenerate):
        solve_qp(np.diag([1.0, -1.0]), np.zeros(2), G, h)


def test_iteration_limit_raises():
    rng = np.random.default_rng(3)
    H, f, G, h = random_qp(rng, n=8, m=16)
    assert solve_qp(H, f, G, h).iterations > 2
    with pytest.raises(QpMaxIterations):
        solve_qp(H, f, G, h, max_iter=2)


def test_error_types_are_distinct():
    assert len({QpInfeasible, QpDegenerate, QpMaxIterations}) == 3
    assert not issubclass(QpInfeasible, QpDegenerate)
    assert not issubclass(QpMaxIterations, QpInfeasible)
