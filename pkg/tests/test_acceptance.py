"""Acceptance criteria, one PASS/FAIL line each (printed in the terminal summary).

Every tolerance is pinned in the module constants below.  Each test records
its line before asserting, so a failing criterion still reports its numbers.
"""
import math
import time
import warnings

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from fracdesign import BoundaryWarning, ExperimentAborted, RegimeWarning
from fracdesign.design import (
    MODULATED,
    POWER_LAW,
    ControlSpec,
    control_energy,
    design_optimal_input,
    realize_real_control,
    resonance_frequency,
)
from fracdesign.experiment import ExperimentConfig, run_experiment
from fracdesign.fisher import asymptotic_rate, fisher_brownian, fisher_fractional, g_difference, g_sensitivity, small_time_order
from fracdesign.fractional import SampledControl, TimeGrid, U_DOMAIN, V_DOMAIN, eval_wH
from fracdesign.spectral import build_KT, det_psi1, laplace_identity_check, spectral_bound, top_eigenvalue
from fracdesign.state import SystemParams, solve_zeta

RATE_TOL_1 = 0.05
H_AGREE_TOL = 0.05
RATE_TOL_2_BROWNIAN = 0.05
RATE_TOL_2_FRACTIONAL = 0.10
REDUCTION_TOL = 1e-6
NU_UPPER = 1.02
NU_LOWER = 0.90
LAPLACE_TOL = 0.02
LAPLACE_ZERO_TOL = 1e-10
DET_TOL = 1e-6
BIAS_TOL = 0.05
VAR_RANGE = (0.7, 1.3)
NORMALITY_P = 0.01
REMAINDER_RATIO = 0.10
ENERGY_TOL = 1e-8
OPTIMALITY_MARGIN = 0.20
SENSITIVITY_TOL = 1e-4
ORDER_TARGET, ORDER_TOL = 4.0, 0.1

NODES_PER_UNIT = 8


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"[ACCEPT {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _grid(p, T):
    return TimeGrid.weight_clock(p.constants, T, int(math.ceil(eval_wH(T, p.constants) * NODES_PER_UNIT)))


def _rate(p, spec, T=200.0):
    g = _grid(p, T)
    return fisher_fractional(p, realize_real_control(spec, g), g).rate


def _rel(x, ref):
    return abs(x / ref - 1.0)


def test_criterion_01_fisher_rate_case1():
    rates = {H: _rate(SystemParams(1.0, 2.0, H), design_optimal_input(SystemParams(1.0, 2.0, H))) for H in (0.5, 0.7)}
    agree = _rel(rates[0.7], rates[0.5])
    ok = all(_rel(r, 1.0) < RATE_TOL_1 for r in rates.values()) and agree < H_AGREE_TOL
    record(1, ok, f"case-1 rate H=0.5 {rates[0.5]:.5f}, H=0.7 {rates[0.7]:.5f} (target 1 +-{RATE_TOL_1:.0%}); "
                  f"H gap {agree:.4f} < {H_AGREE_TOL}")


def test_criterion_02_fisher_rate_case2():
    p = SystemParams(1.0, 1.0, 0.5)
    w = resonance_frequency(p)
    f = lambda t: math.sqrt(2.0) * np.cos(w * t)
    g = TimeGrid.uniform(200.0, 1600)
    brown = fisher_brownian(p, SampledControl(g, f(g.points), U_DOMAIN, func=f), g).rate
    p6 = SystemParams(1.0, 1.0, 0.6)
    frac = _rate(p6, design_optimal_input(p6))
    target = 16.0 / 9.0
    ok = _rel(brown, target) < RATE_TOL_2_BROWNIAN and _rel(frac, target) < RATE_TOL_2_FRACTIONAL
    record(2, ok, f"case-2 Brownian rate {brown:.5f}, fractional H=0.6 {frac:.5f} vs 16/9={target:.5f} "
                  f"(tol {RATE_TOL_2_BROWNIAN:.0%} / {RATE_TOL_2_FRACTIONAL:.0%})")


def test_criterion_03_half_reduction():
    p = SystemParams(1.0, 2.0, 0.5)
    T = 50.0
    g = TimeGrid.uniform(T, 800)
    controls = {
        "constant": lambda t: np.ones_like(t),
        "modulated": lambda t: math.sqrt(2.0) * np.cos(0.7 * t),
        "ramp": lambda t: t / T,
    }
    worst = 0.0
    for f in controls.values():
        fr = fisher_fractional(p, SampledControl(g, f(g.points), V_DOMAIN, func=f), g).total
        br = fisher_brownian(p, SampledControl(g, f(g.points), U_DOMAIN, func=f), g).total
        worst = max(worst, _rel(fr, br))
    record(3, worst < REDUCTION_TOL, f"H=1/2 fractional vs Brownian information, worst rel diff {worst:.2e} "
                                     f"< {REDUCTION_TOL:g} over {', '.join(controls)}")


def test_criterion_04_spectral_gap():
    parts, ok = [], True
    for k in (2.0, 1.0):
        p = SystemParams(1.0, k, 0.5)
        nu1, bound = top_eigenvalue(build_KT(p, 200.0, 512)), spectral_bound(p)
        ok &= NU_LOWER * bound <= nu1 <= NU_UPPER * bound
        parts.append(f"k={k:g}: nu1/bound {nu1 / bound:.5f}")
    # not part of the criterion: away from H=1/2 the finite-T eigenvalue sits above the bound
    p = SystemParams(1.0, 2.0, 0.7)
    diag = top_eigenvalue(build_KT(p, 200.0, 512)) / spectral_bound(p)
    record(4, ok, f"H=0.5 {'; '.join(parts)} in [{NU_LOWER}, {NU_UPPER}] "
                  f"(diagnostic H=0.7 k=2: {diag:.5f})")


def test_criterion_05_laplace_identity():
    res = {H: laplace_identity_check(SystemParams(1.0, 2.0, H), -0.2, 20.0, 512).residual for H in (0.5, 0.7)}
    zero = laplace_identity_check(SystemParams(1.0, 2.0, 0.5), 0.0, 20.0, 512)
    zdev = max(abs(zero.lhs - 1.0), abs(zero.rhs - 1.0))
    ok = all(r < LAPLACE_TOL for r in res.values()) and zdev <= LAPLACE_ZERO_TOL
    record(5, ok, f"Laplace residual a=-0.2: H=0.5 {res[0.5]:.2e}, H=0.7 {res[0.7]:.2e} < {LAPLACE_TOL}; "
                  f"a=0 max|side-1| {zdev:.1e} <= {LAPLACE_ZERO_TOL:g}")


def test_criterion_06_det_baseline():
    worst = 0.0
    for k, T in ((1.0, 1.0), (2.0, 5.0)):
        for H in (0.5, 0.7):
            worst = max(worst, _rel(det_psi1(SystemParams(1.0, k, H), 0.0, T), math.exp(2 * k * T)))
    record(6, worst < DET_TOL, f"det Psi1 at a=0 vs exp(2kT), worst rel err {worst:.2e} < {DET_TOL:g}")


@pytest.mark.slow
def test_criterion_07_mle_efficiency(tmp_path):
    cfg = ExperimentConfig(SystemParams(1.0, 2.0, 0.6), 100.0, replications=200, base_seed=7,
                           output_path=str(tmp_path / "mle.csv"))
    s = run_experiment(cfg)
    ok = (abs(s.mean_bias) < BIAS_TOL and VAR_RANGE[0] <= s.var_standardized <= VAR_RANGE[1]
          and s.normality_p > NORMALITY_P)
    record(7, ok, f"MLE n={s.n}: bias {s.mean_bias:+.4f} (<{BIAS_TOL}), var {s.var_standardized:.3f} "
                  f"in {list(VAR_RANGE)}, AD p {s.normality_p:.3f} > {NORMALITY_P}, {s.wall_time:.0f}s")


@pytest.mark.slow
def test_criterion_08_two_stage_efficiency(tmp_path):
    cfg = ExperimentConfig(SystemParams(1.0, 1.0, 0.6), 100.0, replications=200, base_seed=7,
                           method="two_stage", tau_epsilon=0.05, rho=10.0,
                           output_path=str(tmp_path / "two_stage.csv"))
    note = ""
    try:
        s = run_experiment(cfg)
    except ExperimentAborted as exc:
        s = exc.summary
        note = f"aborted: {exc}; "
    if s is None:
        record(8, False, note + "no successful replications")
    ratio = s.median_abs_remainder / s.median_abs_leading
    ok = (not note and VAR_RANGE[0] <= s.var_standardized <= VAR_RANGE[1] and ratio < REMAINDER_RATIO)
    record(8, ok, f"{note}two-stage n={s.n}: var {s.var_standardized:.3f} in {list(VAR_RANGE)}, "
                  f"median|R|/median|lead| {ratio:.3f} < {REMAINDER_RATIO}")


def test_criterion_09_energy():
    worst1 = 0.0
    for H in (0.5, 0.6, 0.7, 0.9):
        p = SystemParams(1.0, 2.0, H)
        for T in (1.0, 50.0, 200.0):
            v = realize_real_control(design_optimal_input(p), _grid(p, T))
            worst1 = max(worst1, abs(control_energy(v, p.constants) - 1.0))
    ok2, parts = True, []
    for T in (50.0, 100.0, 200.0):
        p = SystemParams(1.0, 1.0, 0.6)
        e = control_energy(realize_real_control(design_optimal_input(p), _grid(p, T)), p.constants)
        ok2 &= abs(e - 1.0) <= 1.0 / T
        parts.append(f"T={T:g}: {e:.5f}")
    record(9, worst1 <= ENERGY_TOL and ok2, f"case-1 max|E-1| {worst1:.1e} <= {ENERGY_TOL:g}; "
                                            f"case-2 energy {', '.join(parts)} within 1/T")


def test_criterion_10_optimality():
    ok, parts = True, []
    for H in (0.5, 0.6):
        p = SystemParams(1.0, 1.0, H)
        w = resonance_frequency(p)
        best = _rate(p, design_optimal_input(p))
        flat = _rate(p, ControlSpec(POWER_LAW, hurst=H))
        wrong = _rate(p, ControlSpec(MODULATED, frequency=2 * w, phase=0.0, hurst=H))
        ok &= best >= (1 + OPTIMALITY_MARGIN) * max(flat, wrong)
        parts.append(f"H={H:g}: designed {best:.4f}, constant {flat:.4f}, 2w {wrong:.4f}")
    record(10, ok, "; ".join(parts) + f" (margin {OPTIMALITY_MARGIN:.0%})")


def test_criterion_11_sensitivity_and_order():
    worst = 0.0
    h = 1e-5
    for H in (0.5, 0.7):
        p = SystemParams(1.0, 2.0, H)
        g = _grid(p, 10.0)
        v = realize_real_control(design_optimal_input(p), g)
        an = solve_zeta(p, v, g).dzeta_dtheta
        fd = (solve_zeta(p.with_theta(1 + h), v, g).zeta - solve_zeta(p.with_theta(1 - h), v, g).zeta) / (2 * h)
        worst = max(worst, float(np.abs(an - fd).max() / np.abs(an).max()))
        tg = TimeGrid(np.concatenate([np.geomspace(1e-9, 1e-2, 300, endpoint=False), np.linspace(1e-2, 5.0, 4000)]))
        gan = g_sensitivity(p, tg)
        gfd = g_difference(p.with_theta(1 - h), tg, 2 * h) / (2 * h)
        worst = max(worst, float(np.abs(gan - gfd).max() / np.abs(gan).max()))
    slopes = [small_time_order(SystemParams(1.0, 2.0, H), 0.1)[0] for H in (0.5, 0.7)]
    ok = worst < SENSITIVITY_TOL and all(abs(s - ORDER_TARGET) <= ORDER_TOL for s in slopes)
    record(11, ok, f"sensitivity rel err {worst:.1e} < {SENSITIVITY_TOL:g}; small-t order "
                   f"{', '.join(f'{s:.3f}' for s in slopes)} = {ORDER_TARGET} +- {ORDER_TOL}")
