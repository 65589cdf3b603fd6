import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracdesign import DomainError
from fracdesign.design import (
    CUSTOM,
    MODULATED,
    POWER_LAW,
    ControlSpec,
    control_energy,
    design_optimal_input,
    physical_control,
    realize_real_control,
    resonance_frequency,
)
from fracdesign.fractional import SampledControl, TimeGrid, V_DOMAIN, compute_constants, u_from_v
from fracdesign.state import SystemParams


def test_family_switch_and_boundary():
    assert design_optimal_input(SystemParams(1.0, 2.0)).family == POWER_LAW
    # k^2 = 2 theta exactly is on the power-law side
    assert design_optimal_input(SystemParams(2.0, 2.0)).family == POWER_LAW
    spec = design_optimal_input(SystemParams(1.0, 1.0, 0.6))
    assert spec.family == MODULATED
    assert spec.frequency == pytest.approx(math.sqrt(0.5), rel=1e-15)
    assert spec.hurst == 0.6


def test_resonance_requires_underdamping():
    assert resonance_frequency(SystemParams(3.0, 2.0)) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        resonance_frequency(SystemParams(1.0, 2.0))


def test_spec_validation():
    with pytest.raises(DomainError):
        ControlSpec("sawtooth")
    with pytest.raises(DomainError):
        ControlSpec(MODULATED)
    with pytest.raises(DomainError):
        ControlSpec(POWER_LAW, frequency=1.0)
    with pytest.raises(DomainError):
        ControlSpec(POWER_LAW, scale=0.0)
    with pytest.raises(DomainError):
        realize_real_control(ControlSpec(CUSTOM), TimeGrid.uniform(1.0, 4))


@given(
    st.sampled_from([POWER_LAW, MODULATED]),
    st.floats(min_value=0.01, max_value=100.0),
    st.floats(min_value=0.01, max_value=10.0),
    st.floats(min_value=-3.0, max_value=3.0),
    st.floats(min_value=0.5, max_value=0.95),
)
def test_spec_dict_roundtrip(family, scale, freq, phase, hurst):
    kw = {} if family == POWER_LAW else {"frequency": freq, "phase": phase}
    spec = ControlSpec(family, scale=scale, hurst=hurst, **kw)
    assert ControlSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("hurst", [0.5, 0.6, 0.7, 0.9])
@pytest.mark.parametrize("T", [1.0, 7.5, 50.0])
def test_power_law_energy_is_one(hurst, T):
    p = SystemParams(1.0, 2.0, hurst)
    grid = TimeGrid.weight_clock(p.constants, T, 32)
    v = realize_real_control(design_optimal_input(p), grid)
    assert control_energy(v, p.constants) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("T", [50.0, 100.0, 200.0])
@pytest.mark.parametrize("hurst", [0.5, 0.6])
def test_modulated_energy_within_one_over_T(T, hurst):
    p = SystemParams(1.0, 1.0, hurst)
    grid = TimeGrid.weight_clock(p.constants, T, 32)
    v = realize_real_control(design_optimal_input(p), grid)
    assert abs(control_energy(v, p.constants) - 1.0) <= 1.0 / T


def test_energy_scales_quadratically():
    p = SystemParams(1.0, 2.0, 0.7)
    grid = TimeGrid.weight_clock(p.constants, 10.0, 32)
    v = realize_real_control(design_optimal_input(p, scale=3.0), grid)
    assert control_energy(v, p.constants) == pytest.approx(9.0, rel=1e-10)


def test_sampled_energy_trapezoid():
    c = compute_constants(0.5)
    grid = TimeGrid.uniform(10.0, 1000)
    v = SampledControl(grid, np.ones(1001), V_DOMAIN)
    assert control_energy(v, c) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("hurst", [0.6, 0.8])
def test_power_law_u_profile_is_the_transform(hurst):
    p = SystemParams(1.0, 2.0, hurst)
    spec = design_optimal_input(p)
    grid = TimeGrid(np.linspace(0.5, 5.0, 6))
    u = u_from_v(realize_real_control(spec, grid), p.constants)
    assert np.allclose(u.values, physical_control(spec, grid).values, rtol=3e-5)


def test_u_profile_unavailable_for_fractional_modulated():
    spec = design_optimal_input(SystemParams(1.0, 1.0, 0.7))
    with pytest.raises(DomainError):
        spec.u_profile(1.0)
    half = design_optimal_input(SystemParams(1.0, 1.0, 0.5))
    assert half.u_profile(2.0) == pytest.approx(math.sqrt(2.0) * math.cos(math.sqrt(0.5) * 2.0))
