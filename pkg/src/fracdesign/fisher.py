"""Fisher information, its asymptotic limits, the g-function and regularity checks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _ode
from .design import design_optimal_input, realize_real_control
from .errors import DomainError, GridError
from .fractional import SampledControl, TimeGrid
from .state import (
    DEFAULT_STEPS,
    SystemParams,
    ZetaSolver,
    solve_physical_x,
)

FRACTIONAL = "fractional"
BROWNIAN = "brownian"
ASYMPTOTIC = "asymptotic"


@dataclass(frozen=True)
class FisherReport:
    total: float
    rate: float
    asymptote: float
    horizon: float
    mode: str

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        if self.total < 0:
            raise DomainError("Fisher information cannot be negative")

    def to_dict(self):
        return asdict(self)


def asymptotic_rate(p: SystemParams) -> float:
    """Closed-form limit of ``I_T / T`` under the optimal input.

    ``1/theta^4`` when ``k^2 >= 2 theta`` and ``16/(k^4 - 4 k^2 theta)^2``
    otherwise; the boundary belongs to the first case.
    """
    if p.case == 1:
        return 1.0 / p.theta**4
    k2 = p.damping**2
    return 16.0 / (k2 * k2 - 4.0 * k2 * p.theta) ** 2


def _report(total, horizon, p, mode):
    total = max(float(total), 0.0)
    return FisherReport(total, total / horizon, asymptotic_rate(p), float(horizon), mode)


def fisher_fractional(p: SystemParams, v: Optional[SampledControl], grid: TimeGrid,
                      steps_per_unit: float = DEFAULT_STEPS) -> FisherReport:
    """``lam^2 int_0^T (l* dzeta/dtheta)^2 dw`` for the transformed model.

    The integral is accumulated by the same RK4 steps that produce the
    sensitivity, so its accuracy is that of the ODE solve.
    """
    traj = ZetaSolver(p, v, grid, steps_per_unit).solve()
    return _report(traj.info[-1], grid.horizon, p, FRACTIONAL)


def fisher_brownian(p: SystemParams, u: Optional[SampledControl], grid: TimeGrid,
                    steps_per_unit: float = DEFAULT_STEPS) -> FisherReport:
    """``int_0^T (dx/dtheta)^2 dt`` for the oscillator observed in white noise."""
    traj = solve_physical_x(p, u, grid, with_sensitivity=True, steps_per_unit=steps_per_unit)
    return _report(traj.info[-1], grid.horizon, p, BROWNIAN)


def asymptotic_fisher(p: SystemParams, horizon: float = 1.0) -> FisherReport:
    rate = asymptotic_rate(p)
    return FisherReport(rate * horizon, rate, rate, float(horizon), ASYMPTOTIC)


# ---------------------------------------------------------------------------
# g-function

G_PRINTED = "printed"
G_BALANCED = "balanced"


def _g_exponent(exponent, hurst):
    if exponent == G_PRINTED:
        return 0.5
    if exponent == G_BALANCED:
        return 0.5 - hurst
    raise DomainError(f"exponent must be {G_PRINTED!r} or {G_BALANCED!r}")


def _g_times(grid: TimeGrid, p: SystemParams):
    t = grid.points
    if p.hurst > 0.5 and t[0] <= 0:
        raise GridError("g_function needs t0 > 0 when H > 1/2 (singular clock density at 0)")
    return t


def _g_run(p, times, dth, cq, sub):
    n = times.size
    z = np.zeros((n, 4))
    d = np.zeros((n, 4))
    _ode.g_pair(np.ascontiguousarray(times), sub, 2.0 * p.hurst - 1.0, p.theta, dth, cq,
                p.damping, 0.5 - p.hurst, z, d)
    return z, d


def _ell(times, p, arr):
    return times ** (2.0 * p.hurst - 1.0) * arr[:, 0] + arr[:, 1]


def g_function(p: SystemParams, grid: TimeGrid, exponent: str = G_BALANCED, sub: int = 16) -> np.ndarray:
    """``g(theta, t) = t^e l(t)* phi(t) int_0^t phi^-1(s) b(s) s^(1/2-H) ds`` on ``grid``.

    ``exponent='printed'`` uses ``e = 1/2``; ``'balanced'`` uses
    ``e = 1/2 - H``, the choice under which ``(1/4) int |dg/dtheta|^2 dt``
    is the Fisher information of the optimal power-law input.  The
    integral starts at the first grid point (the state is at rest there),
    so grids should start close to 0 and be geometric near it.
    """
    t = _g_times(grid, p)
    z, _ = _g_run(p, t, 0.0, 0.0, sub)
    return t ** _g_exponent(exponent, p.hurst) * _ell(t, p, z)


def g_difference(p: SystemParams, grid: TimeGrid, h: float, exponent: str = G_BALANCED,
                 sub: int = 16) -> np.ndarray:
    """``g(theta + h, t) - g(theta, t)`` integrated as a single difference system."""
    t = _g_times(grid, p)
    _, d = _g_run(p, t, float(h), float(h), sub)
    return t ** _g_exponent(exponent, p.hurst) * _ell(t, p, d)


def g_sensitivity(p: SystemParams, grid: TimeGrid, exponent: str = G_BALANCED, sub: int = 16) -> np.ndarray:
    """``dg/dtheta`` on ``grid``."""
    t = _g_times(grid, p)
    _, d = _g_run(p, t, 1.0, 0.0, sub)
    return t ** _g_exponent(exponent, p.hurst) * _ell(t, p, d)


def fisher_from_g(p: SystemParams, grid: TimeGrid, sub: int = 16) -> float:
    """``(1/4) int |dg/dtheta|^2 dt`` with the balanced exponent (trapezoid on ``grid``)."""
    dg = g_sensitivity(p, grid, G_BALANCED, sub)
    return 0.25 * float(np.trapezoid(dg**2, grid.points))


def small_time_order(p: SystemParams, h: float, t_lo: float = 1e-3, t_hi: float = 1e-2,
                     exponent: str = G_BALANCED, t0: float = 1e-9, points: int = 41):
    """Fitted log-log slope of ``|g(theta + h, t) - g(theta, t)|`` on ``[t_lo, t_hi]``.

    Returns ``(slope, times, values)``.
    """
    fit_t = np.geomspace(t_lo, t_hi, points)
    lead = np.geomspace(t0, t_lo, 200, endpoint=False)
    grid = TimeGrid(np.concatenate([lead, fit_t]))
    diff = np.abs(g_difference(p, grid, h, exponent))[lead.size:]
    slope = np.polyfit(np.log(fit_t), np.log(diff), 1)[0]
    return float(slope), fit_t, diff


# ---------------------------------------------------------------------------
# Ibragimov-Khasminskii style checks


@dataclass
class IKReport:
    """Numerical evidence for the regularity conditions of the MLE.

    ``F`` holds ``int |X(theta + h I^-1/2) - X(theta)|^2 dw`` for each h;
    ``C`` and ``beta`` define the lower envelope ``C min(h^2, |h|^beta)``.
    """

    theta: float
    horizon: float
    fisher: float
    h: list
    F: list
    C: float
    beta: float
    envelope_ok: bool
    quadratic_ratio: list
    monotone_information: bool
    information_diverges: bool
    compact: tuple
    rate_ratio: float
    window_ratios: tuple
    bounded_ratio: bool
    condition1: bool = field(init=False)
    condition2: bool = field(init=False)

    def __post_init__(self):
        self.condition1 = self.monotone_information and self.information_diverges
        self.condition2 = self.bounded_ratio

    def to_dict(self):
        return asdict(self)


def ik_condition_check(
    p: SystemParams,
    grid: TimeGrid,
    h_values: Sequence[float],
    v: Optional[SampledControl] = None,
    compact: Optional[tuple] = None,
    ratio_growth: float = 0.1,
    compact_points: int = 5,
    steps_per_unit: float = DEFAULT_STEPS,
) -> IKReport:
    """Evaluate ``F(h)`` and the information conditions on ``grid``.

    ``v`` defaults to the designed optimal input for ``p``; the compact
    defaults to ``[theta/4, 4 theta]``.  The information ratio over the
    compact counts as bounded in ``T`` when the ratio of information gained
    on ``[T/2, T]`` differs from that on ``[T/4, T/2]`` by less than
    ``ratio_growth`` (relative); slow poles near the ends of the compact
    need horizons long enough for their transients to die out.
    """
    if v is None:
        v = realize_real_control(design_optimal_input(p), grid)
    lo, hi = compact if compact is not None else (p.theta / 4.0, 4.0 * p.theta)
    if not (0 < lo < p.theta < hi):
        raise DomainError("compact must be an interval inside (0, inf) containing theta")
    solver = ZetaSolver(p, v, grid, steps_per_unit)
    traj = solver.solve()
    info = traj.info
    fisher = float(info[-1])
    if fisher <= 0:
        raise DomainError("zero Fisher information: the input does not excite the system")
    scale = 1.0 / math.sqrt(fisher)

    hs = [float(h) for h in h_values]
    F = []
    for h in hs:
        th = p.theta + h * scale
        if not (lo <= th <= hi):
            raise DomainError(f"theta + h I^-1/2 = {th:g} leaves the compact [{lo:g}, {hi:g}]")
        F.append(0.0 if h == 0 else float(solver.drift_gap(th, p.theta)[-1]))

    ha = np.abs(np.array(hs))
    Fa = np.array(F)
    nz = ha > 0
    big = nz & (ha >= 1.0)
    if np.count_nonzero(big) >= 2:
        beta = float(np.polyfit(np.log(ha[big]), np.log(np.maximum(Fa[big], 1e-300)), 1)[0])
    else:
        beta = 2.0
    env = np.minimum(ha**2, ha**beta)
    C = float(np.min(Fa[nz] / env[nz])) if np.any(nz) else 0.0
    envelope_ok = bool(np.all(Fa[nz] >= C * env[nz] * (1 - 1e-12)))
    quad = [float(f / h**2) for h, f in zip(hs, F) if h != 0 and abs(h) <= 1.0]

    monotone = bool(np.all(np.diff(info) >= -1e-12 * max(fisher, 1.0)))
    # linear growth: the second half carries a fixed share of the total
    half = grid.horizon / 2.0
    mid = float(np.interp(half, grid.points, info))
    diverges = bool(fisher - mid > 0.1 * fisher)

    thetas = np.linspace(lo, hi, compact_points)
    paths = [solver.solve(th).info for th in thetas]
    full = np.array([path[-1] for path in paths])
    at = lambda t_end: np.array([np.interp(t_end, grid.points, path) for path in paths])
    i4, i2, i1 = at(grid.horizon / 4.0), at(half), at(grid.horizon)
    ratio = float(i1.max() / i1.min()) if i1.min() > 0 else math.inf
    # windowed rates lose the transient offsets, so their ratio settles quickly
    early, late = i2 - i4, i1 - i2
    r_early = float(early.max() / early.min()) if early.min() > 0 else math.inf
    r_late = float(late.max() / late.min()) if late.min() > 0 else math.inf
    bounded = math.isfinite(r_early) and math.isfinite(r_late) and abs(r_late / r_early - 1.0) < ratio_growth
    return IKReport(
        theta=p.theta,
        horizon=grid.horizon,
        fisher=fisher,
        h=hs,
        F=F,
        C=C,
        beta=beta,
        envelope_ok=envelope_ok,
        quadratic_ratio=quad,
        monotone_information=monotone,
        information_diverges=diverges,
        compact=(lo, hi),
        rate_ratio=ratio,
        window_ratios=(r_early, r_late),
        bounded_ratio=bool(bounded),
    )
