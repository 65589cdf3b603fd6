import math

import numpy as np
import pytest

from fracdesign import DomainError, GridError
from fracdesign.design import design_optimal_input, realize_real_control
from fracdesign.fisher import (
    FisherReport,
    asymptotic_fisher,
    asymptotic_rate,
    fisher_fractional,
    fisher_from_g,
    g_difference,
    g_function,
    g_sensitivity,
    ik_condition_check,
    small_time_order,
)
from fracdesign.fractional import TimeGrid
from fracdesign.state import SystemParams


@pytest.mark.parametrize(
    "theta,k,rate",
    [
        (1.0, 2.0, 1.0),
        (1.0, 1.0, 16.0 / 9.0),
        (2.0, 2.0, 1.0 / 16.0),  # boundary k^2 = 2 theta uses the first formula
        (2.0, 1.0, 16.0 / 49.0),
        (0.5, 3.0, 16.0),
    ],
)
def test_asymptotic_rate_oracle(theta, k, rate):
    assert asymptotic_rate(SystemParams(theta, k)) == pytest.approx(rate, rel=1e-15)


def test_rate_continuous_at_boundary_from_below():
    # the two formulas meet only approximately; the boundary is assigned to case 1
    below = asymptotic_rate(SystemParams(2.0 + 1e-9, 2.0))
    assert math.isfinite(below)


def test_report_validation():
    with pytest.raises(DomainError):
        FisherReport(1.0, 1.0, 1.0, 0.0, "fractional")
    with pytest.raises(DomainError):
        FisherReport(-1.0, 1.0, 1.0, 1.0, "fractional")
    rep = asymptotic_fisher(SystemParams(1.0, 1.0), 10.0)
    assert rep.total == pytest.approx(160.0 / 9.0)


def test_zero_input_gives_zero_information():
    p = SystemParams(1.0, 2.0, 0.6)
    grid = TimeGrid.weight_clock(p.constants, 10.0, 10)
    assert fisher_fractional(p, None, grid).total == 0.0


def test_information_quadratic_in_scale():
    p = SystemParams(1.0, 2.0, 0.7)
    grid = TimeGrid.weight_clock(p.constants, 20.0, 10)
    one = fisher_fractional(p, realize_real_control(design_optimal_input(p), grid), grid).total
    two = fisher_fractional(p, realize_real_control(design_optimal_input(p, 2.0), grid), grid).total
    assert two == pytest.approx(4.0 * one, rel=1e-12)


def _g_grid(T):
    return TimeGrid(np.concatenate([np.geomspace(1e-9, 1e-2, 300, endpoint=False), np.linspace(1e-2, T, 4000)]))


@pytest.mark.parametrize("hurst", [0.5, 0.7])
def test_g_sensitivity_matches_difference_quotient(hurst):
    p = SystemParams(1.0, 2.0, hurst)
    grid = _g_grid(5.0)
    h = 1e-5
    fd = (g_difference(p.with_theta(1.0 - h), grid, 2 * h)) / (2 * h)
    an = g_sensitivity(p, grid)
    assert np.max(np.abs(fd - an)) <= 1e-4 * np.max(np.abs(an))


@pytest.mark.parametrize("hurst", [0.5, 0.6, 0.7])
def test_fisher_from_g_matches_state_pipeline(hurst):
    p = SystemParams(1.0, 2.0, hurst)
    T = 10.0
    ref = fisher_fractional(p, realize_real_control(design_optimal_input(p), TimeGrid.weight_clock(p.constants, T, 8)),
                            TimeGrid.weight_clock(p.constants, T, 8)).total
    assert fisher_from_g(p, _g_grid(T)) == pytest.approx(ref, rel=1e-5)


def test_g_difference_is_difference_of_g():
    p = SystemParams(1.0, 2.0, 0.7)
    grid = _g_grid(3.0)
    d = g_difference(p, grid, 0.3)
    direct = g_function(p.with_theta(1.3), grid) - g_function(p, grid)
    assert np.allclose(d, direct, rtol=1e-8, atol=1e-14)


@pytest.mark.parametrize("hurst", [0.5, 0.7])
def test_small_time_order_balanced(hurst):
    slope, t, vals = small_time_order(SystemParams(1.0, 2.0, hurst), 0.1)
    assert slope == pytest.approx(4.0, abs=0.1)
    assert np.all(vals > 0)


def test_small_time_order_printed_exponent():
    # the unbalanced power shifts the order by H
    slope, _, _ = small_time_order(SystemParams(1.0, 2.0, 0.7), 0.1, exponent="printed")
    assert slope == pytest.approx(4.7, abs=0.1)


def test_g_guards():
    p = SystemParams(1.0, 2.0, 0.7)
    with pytest.raises(GridError):
        g_function(p, TimeGrid.uniform(1.0, 4))
    with pytest.raises(DomainError):
        g_function(p, _g_grid(1.0), exponent="other")


def test_ik_conditions_case1():
    p = SystemParams(1.0, 2.0, 0.6)
    grid = TimeGrid.weight_clock(p.constants, 200.0, 200)
    rep = ik_condition_check(p, grid, [-3.0, -1.0, -0.3, 0.3, 1.0, 3.0])
    assert rep.condition1 and rep.condition2 and rep.envelope_ok
    assert rep.C > 0
    # F(h) ~ h^2 for small h: ratio near one in the Fisher scaling
    assert all(0.5 < r < 1.5 for r in rep.quadratic_ratio)
    assert rep.F[0] > 0 and rep.F[-1] > 0


def test_ik_quadratic_limit_by_halving():
    p = SystemParams(1.0, 2.0, 0.6)
    grid = TimeGrid.weight_clock(p.constants, 100.0, 200)
    hs = [0.2, 0.1, 0.05, 0.025]
    rep = ik_condition_check(p, grid, hs, compact=(0.5, 2.0))
    q = rep.quadratic_ratio
    # F(h)/h^2 settles as h halves
    assert abs(q[-1] - q[-2]) < abs(q[1] - q[0])
    assert q[-1] == pytest.approx(1.0, abs=0.05)


def test_ik_compact_must_contain_theta():
    p = SystemParams(1.0, 2.0, 0.6)
    grid = TimeGrid.weight_clock(p.constants, 10.0, 50)
    with pytest.raises(DomainError):
        ik_condition_check(p, grid, [0.5], compact=(1.5, 2.0))
