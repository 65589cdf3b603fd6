import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from fracdesign import ConditioningError, DomainError, GridError
from fracdesign.design import design_optimal_input, realize_real_control
from fracdesign.fractional import U_DOMAIN, V_DOMAIN, SampledControl, TimeGrid, eval_wH
from fracdesign.state import (
    SystemParams,
    ZetaSolver,
    eval_system_matrices,
    solve_fundamental_matrix,
    solve_physical_x,
    solve_zeta,
    variation_of_constants,
)


def const_control(grid, value=1.0, clock=V_DOMAIN):
    return SampledControl(grid, np.full(grid.points.size, value), clock,
                          func=lambda t: np.full(np.shape(t), value))


def brownian_zeta_oracle(theta, k, t):
    # at H = 1/2 the system is constant-coefficient; augment with the constant input
    M = np.zeros((5, 5))
    A0 = np.array([[0.0, 1.0], [-theta, -k]])
    M[:4, :4] = np.kron(A0, 0.5 * np.ones((2, 2)))
    M[:4, 4] = [0.0, 0.0, 1.0, 1.0]
    return expm(M * t)[:4, 4]


def test_params_validation():
    with pytest.raises(DomainError):
        SystemParams(-1.0, 1.0)
    with pytest.raises(DomainError):
        SystemParams(1.0, 0.0)
    with pytest.raises(DomainError):
        SystemParams(1.0, 1.0, hurst=1.0)
    p = SystemParams(1.0, 2.0, 0.7)
    assert p.case == 1 and SystemParams(1.0, 1.0).case == 2
    # the regime boundary k^2 = 2 theta belongs to case 1
    assert SystemParams(2.0, 2.0).case == 1
    assert p.with_theta(3.0).theta == 3.0


def test_system_matrices():
    p = SystemParams(1.0, 2.0, 0.7)
    ell, A0, A, b = eval_system_matrices(2.0, p)
    q = 2.0**0.4
    assert np.allclose(ell, [q, 1, 0, 0]) and np.allclose(b, [0, 0, 1, q])
    assert np.allclose(A, np.outer([1, q], [q, 1]))
    with pytest.raises(DomainError):
        eval_system_matrices(0.0, p)


def test_zeta_matches_expm_at_half():
    p = SystemParams(1.3, 0.8, 0.5)
    grid = TimeGrid.uniform(6.0, 12)
    traj = solve_zeta(p, const_control(grid), grid)
    for i in (3, 7, 12):
        assert np.allclose(traj.zeta[i], brownian_zeta_oracle(1.3, 0.8, grid.points[i]), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("hurst", [0.5, 0.6, 0.7])
def test_sensitivity_matches_finite_difference(hurst):
    p = SystemParams(1.0, 2.0, hurst)
    grid = TimeGrid.weight_clock(p.constants, 10.0, 40)
    v = realize_real_control(design_optimal_input(p), grid)
    solver = ZetaSolver(p, v, grid)
    h = 1e-4
    fd = (solver.solve(1.0 + h).zeta - solver.solve(1.0 - h).zeta) / (2 * h)
    an = solver.solve().dzeta_dtheta
    assert np.max(np.abs(fd - an)) <= 1e-4 * np.max(np.abs(an))


@pytest.mark.parametrize("hurst", [0.5, 0.7, 0.9])
def test_liouville(hurst):
    p = SystemParams(1.0, 2.0, hurst)
    grid = TimeGrid.weight_clock(p.constants, 10.0, 20)
    fm = solve_fundamental_matrix(p, grid)
    det = np.linalg.det(fm.phi)
    assert np.allclose(det, np.exp(-p.damping * grid.points), rtol=1e-8, atol=0)
    eye = np.einsum("nij,njk->nik", fm.phi, fm.phi_inv)
    cond = np.linalg.norm(fm.phi, 2, axis=(1, 2)) * np.linalg.norm(fm.phi_inv, 2, axis=(1, 2))
    assert np.all(np.abs(eye - np.eye(4)).max(axis=(1, 2)) <= 1e-12 * cond)


def test_fundamental_matrix_conditioning_guard():
    p = SystemParams(1.0, 2.0, 0.6)
    grid = TimeGrid.weight_clock(p.constants, 100.0, 50)
    with pytest.raises(ConditioningError):
        solve_fundamental_matrix(p, grid)


def test_variation_of_constants_matches_solver():
    p = SystemParams(1.0, 2.0, 0.7)
    # the trapezoid sum converges like h^(4/3) for this input, hence the dense grid
    grid = TimeGrid.weight_clock(p.constants, 5.0, 16000)
    v = realize_real_control(design_optimal_input(p), grid)
    z = variation_of_constants(solve_fundamental_matrix(p, grid), v)
    ref = solve_zeta(p, v, grid).zeta
    assert np.max(np.abs(z - ref)) <= 1e-5 * np.max(np.abs(ref))


def test_origin_guard():
    p = SystemParams(1.0, 2.0, 0.7)
    with pytest.raises(GridError):
        solve_zeta(p, None, TimeGrid(np.linspace(1.0, 5.0, 5)))


def test_zero_control_gives_zero_state():
    p = SystemParams(1.0, 2.0, 0.7)
    grid = TimeGrid.weight_clock(p.constants, 5.0, 10)
    traj = solve_zeta(p, None, grid)
    assert not np.any(traj.zeta) and not np.any(traj.info)


@given(st.floats(min_value=-5, max_value=5).filter(lambda a: abs(a) > 1e-3),
       st.sampled_from([0.5, 0.65, 0.8]))
def test_state_is_linear_in_control(alpha, hurst):
    p = SystemParams(1.0, 1.5, hurst)
    grid = TimeGrid.weight_clock(p.constants, 4.0, 8)
    base = solve_zeta(p, const_control(grid), grid).zeta
    scaled = solve_zeta(p, const_control(grid, alpha), grid).zeta
    assert np.allclose(scaled, alpha * base, rtol=1e-12, atol=1e-14)


def test_info_is_integral_of_squared_drift_sensitivity():
    p = SystemParams(1.0, 2.0, 0.6)
    grid = TimeGrid.weight_clock(p.constants, 20.0, 4000)
    traj = solve_zeta(p, realize_real_control(design_optimal_input(p), grid), grid)
    th = grid.thetas(p.constants)
    trap = np.trapezoid(traj.drift_sensitivity**2, th)
    assert traj.info[-1] == pytest.approx(trap, rel=1e-5)
    assert np.all(np.diff(traj.info) >= 0)


def test_drift_shortcuts_match_full_solve():
    p = SystemParams(1.0, 2.0, 0.6)
    grid = TimeGrid.weight_clock(p.constants, 10.0, 50)
    solver = ZetaSolver(p, realize_real_control(design_optimal_input(p), grid), grid)
    assert np.allclose(solver.drift(1.2), solver.solve(1.2).drift, rtol=1e-13, atol=1e-15)
    gap = solver.drift_gap(1.2, 1.0)
    d = solver.drift(1.2) - solver.drift(1.0)
    th = grid.thetas(p.constants)
    assert gap[-1] == pytest.approx(np.trapezoid(d**2, th), rel=1e-3)


def test_fractional_drift_equals_physical_position_at_half():
    p = SystemParams(1.0, 1.0, 0.5)
    grid = TimeGrid.uniform(15.0, 150)
    f = lambda t: np.cos(0.7 * np.asarray(t))
    v = SampledControl(grid, f(grid.points), V_DOMAIN, func=f)
    u = SampledControl(grid, f(grid.points), U_DOMAIN, func=f)
    x = solve_physical_x(p, u, grid).x
    X = solve_zeta(p, v, grid).drift
    assert np.allclose(X, x, rtol=1e-9, atol=1e-11)


def test_physical_closed_form_step_response():
    # critically damped oscillator, unit step: x = (1 - (1 + t) e^-t)
    p = SystemParams(1.0, 2.0, 0.5)
    grid = TimeGrid.uniform(8.0, 16)
    traj = solve_physical_x(p, const_control(grid, clock=U_DOMAIN), grid)
    t = grid.points
    assert np.allclose(traj.x, 1 - (1 + t) * np.exp(-t), atol=1e-11)
    assert np.allclose(traj.x_integral, t - 2 + (2 + t) * np.exp(-t), atol=1e-10)


def test_physical_grid_must_start_at_zero():
    with pytest.raises(GridError):
        solve_physical_x(SystemParams(1.0, 1.0), None, TimeGrid(np.array([1.0, 2.0])))


def test_trajectory_csv(tmp_path):
    p = SystemParams(1.0, 2.0, 0.6)
    grid = TimeGrid.weight_clock(p.constants, 2.0, 4)
    traj = solve_zeta(p, const_control(grid), grid)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    data = np.genfromtxt(path, delimiter=",", names=True)
    assert data.size == 5
