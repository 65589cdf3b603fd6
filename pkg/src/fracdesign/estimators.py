"""Log-likelihood, MLE, the short-interval preliminary estimate and the one-step update."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .design import ControlSpec, MODULATED, POWER_LAW, realize_real_control, resonance_frequency
from .errors import (
    BoundaryWarning,
    ConditioningError,
    DomainError,
    GridError,
    RegimeWarning,
)
from .fractional import SampledControl, TimeGrid, V_DOMAIN, eval_wH
from .simulate import ObservationRecord
from .state import DEFAULT_STEPS, SystemParams, ZetaSolver

MLE = "mle"
PRELIMINARY = "preliminary"
TWO_STAGE = "two_stage"

SCAN_POINTS = 33


@dataclass
class EstimateReport:
    estimate: float
    method: str
    fisher_used: float
    bracket: tuple
    standardized_error: Optional[float] = None
    remainder: Optional[float] = None
    tau: Optional[float] = None
    seed: Optional[int] = None
    config_hash: Optional[str] = None
    wall_ms: Optional[float] = None
    boundary: bool = False
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.fisher_used < 0:
            raise DomainError("fisher_used must be nonnegative")

    def to_dict(self):
        return asdict(self)


def _check_bracket(bracket):
    lo, hi = (float(b) for b in bracket)
    if not (0 < lo < hi and math.isfinite(hi)):
        raise DomainError(f"bracket must satisfy 0 < lo < hi < inf, got {bracket!r}")
    return lo, hi


class LikelihoodModel:
    """Log-likelihood of a record as a function of theta.

    ``log L = sum X_i dZ_i - 1/2 sum X_i^2 dw_i`` with left-point sums over
    the record grid; drifts are cached per theta.
    """

    def __init__(self, obs: ObservationRecord, v: Optional[SampledControl] = None,
                 steps_per_unit: float = DEFAULT_STEPS):
        v = obs.control if v is None else v
        if v is not None:
            if v.clock != V_DOMAIN:
                raise DomainError("the likelihood needs a v-domain control")
            if v.func is None and (v.grid.points.shape != obs.grid.points.shape
                                   or not np.array_equal(v.grid.points, obs.grid.points)):
                raise GridError("control and observation must share the grid")
        self.obs = obs
        self.solver = ZetaSolver(obs.params, v, obs.grid, steps_per_unit)
        self.dz = np.diff(obs.z_values)
        self.dw = np.diff(eval_wH(obs.grid.points, obs.params.constants))
        self._cache = {}
        self._drifts = {}

    def drift(self, theta: float) -> np.ndarray:
        theta = float(theta)
        if theta in self._cache:
            return self._cache[theta].drift
        if theta not in self._drifts:
            if not theta > 0:
                raise DomainError("theta must be positive")
            self._drifts[theta] = self.solver.drift(theta)
        return self._drifts[theta]

    def trajectory(self, theta: float):
        theta = float(theta)
        if theta not in self._cache:
            if not theta > 0:
                raise DomainError("theta must be positive")
            self._cache[theta] = self.solver.solve(theta)
        return self._cache[theta]

    def __call__(self, theta: float) -> float:
        x = self.drift(theta)[:-1]
        return float(x @ self.dz - 0.5 * (x * x) @ self.dw)


def log_likelihood(theta: float, obs: ObservationRecord, v: Optional[SampledControl] = None) -> float:
    """Log of the likelihood ratio of ``obs`` at ``theta`` against the zero-drift model."""
    return LikelihoodModel(obs, v)(theta)


def _maximize(model, lo, hi, xtol):
    grid = np.linspace(lo, hi, SCAN_POINTS)
    vals = np.array([model(t) for t in grid])
    i = int(np.argmax(vals))  # first maximum is the smallest theta
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, SCAN_POINTS - 1)]
    res = optimize.minimize_scalar(lambda t: -model(t), bounds=(a, b), method="bounded",
                                   options={"xatol": xtol})
    est = float(res.x)
    # the bounded search never evaluates its end points; compare with the scan
    if model(est) < vals[i]:
        est = float(grid[i])
    elif i == SCAN_POINTS - 1 and vals[i] >= model(est):
        est = hi
    if i == 0 and vals[0] >= model(est):
        est = lo
    return float(est), (i <= 1 or i >= SCAN_POINTS - 2)


def mle(obs: ObservationRecord, v: Optional[SampledControl] = None, bracket=(0.2, 5.0),
        xtol: float = 1e-9, theta_true: Optional[float] = None,
        steps_per_unit: float = DEFAULT_STEPS) -> EstimateReport:
    """Maximum-likelihood estimate of theta on ``bracket``.

    A 33-point scan locates the best cell, then golden-section search
    refines it.  A maximizer in an edge cell of the scan triggers a
    :class:`BoundaryWarning` and sets ``boundary`` in the report.
    ``fisher_used`` is the Fisher information at the estimate (or at
    ``theta_true`` when given, which then also fills ``standardized_error``).
    """
    lo, hi = _check_bracket(bracket)
    start = time.perf_counter()
    model = LikelihoodModel(obs, v, steps_per_unit)
    tol = xtol * max(1.0, hi - lo)
    est, edge_cell = _maximize(model, lo, hi, tol)
    edge = edge_cell and min(est - lo, hi - est) <= 10.0 * tol
    if edge:
        warnings.warn(
            f"likelihood maximizer {est:.6g} is at the edge of the bracket ({lo:g}, {hi:g})",
            BoundaryWarning,
            stacklevel=2,
        )
    ref = est if theta_true is None else float(theta_true)
    fisher = float(model.trajectory(ref).info[-1])
    std = None if theta_true is None else math.sqrt(fisher) * (est - theta_true)
    return EstimateReport(
        estimate=est,
        method=MLE,
        fisher_used=fisher,
        bracket=(lo, hi),
        standardized_error=std,
        seed=obs.seed,
        wall_ms=1e3 * (time.perf_counter() - start),
        boundary=bool(edge),
        diagnostics={"loglik": model(est)},
    )


def amplified_power_law(params: SystemParams, rho: float) -> ControlSpec:
    """Short-interval input ``rho sqrt(2 lam) t^(H-1/2)``."""
    return ControlSpec(POWER_LAW, scale=float(rho), hurst=params.hurst)


def tau_rho(T: float, epsilon: float):
    """The schedule ``tau = T^-eps`` and ``rho = sqrt(T)``."""
    return T ** (-epsilon), math.sqrt(T)


def preliminary_estimate(obs: ObservationRecord, rho: float, bracket=(0.2, 5.0),
                         tau: Optional[float] = None, v: Optional[SampledControl] = None,
                         floor: float = 1.0, theta_true: Optional[float] = None,
                         steps_per_unit: float = DEFAULT_STEPS) -> EstimateReport:
    """MLE from the record on ``[0, tau]`` under the amplified power-law input.

    ``tau`` defaults to the record horizon.  The report keeps ``tau`` and
    the regime indicator ``tau^9 rho^2``; values below ``floor`` raise a
    :class:`RegimeWarning`.
    """
    tau = obs.grid.horizon if tau is None else float(tau)
    short = obs if tau == obs.grid.horizon else obs.restrict(tau)
    if v is None:
        if short.control is not None:
            v = short.control
        else:
            v = realize_real_control(amplified_power_law(obs.params, rho), short.grid)
    elif v.grid.horizon != tau:
        v = SampledControl(short.grid, v.evaluate(short.grid.points), v.clock, func=v.func, spec=v.spec)
    indicator = tau**9 * rho**2
    if indicator < floor:
        warnings.warn(
            f"tau^9 rho^2 = {indicator:.3g} is below {floor:g}; the short-interval "
            "estimate is outside its asymptotic regime",
            RegimeWarning,
            stacklevel=2,
        )
    rep = mle(short, v, bracket, theta_true=theta_true, steps_per_unit=steps_per_unit)
    rep.method = PRELIMINARY
    rep.tau = tau
    rep.diagnostics["tau9_rho2"] = indicator
    rep.diagnostics["rho"] = float(rho)
    return rep


def stitched_control(params: SystemParams, grid: TimeGrid, tau: float, rho: float,
                     theta_bar: float, phase: float = 0.0) -> SampledControl:
    """Amplified power law on ``[0, tau)`` followed by the modulated input tuned to ``theta_bar``.

    Pieces are left-closed, so the value at ``tau`` belongs to the second one.
    """
    pre = amplified_power_law(params, rho)
    omega = resonance_frequency(params.with_theta(theta_bar))
    post = ControlSpec(MODULATED, scale=1.0, frequency=omega, phase=phase, hurst=params.hurst)

    def f(t):
        t = np.asarray(t, dtype=float)
        return np.where(t < tau, pre.v_profile(t), post.v_profile(t))

    return SampledControl(grid, f(grid.points), V_DOMAIN, func=f, spec=post)


def newton_two_stage(obs: ObservationRecord, tau: float, theta_bar: float,
                     v: Optional[SampledControl] = None, theta_true: Optional[float] = None,
                     fisher_floor: float = 1e-8, iterations: int = 1,
                     fd_rel_step: float = 1e-3, steps_per_unit: float = DEFAULT_STEPS) -> EstimateReport:
    """One-step Newton update from ``theta_bar`` using the record on ``[tau, T]``.

    ``X`` and ``X'`` are the drift and its theta-derivative at
    ``theta_bar`` under the stitched control; sums are left-point over grid
    intervals starting at ``tau``, and the information in the denominator
    is the same left-point sum of ``X'^2``.  With ``theta_true`` the report
    carries the standardized error and the remainder
    ``(1/(2 sqrt(I))) sum X' X'' dw (theta - theta_bar)^2`` (``X''`` by
    central differences); ``diagnostics`` adds the exact remainder and the
    leading martingale term.
    """
    p = obs.params
    if theta_bar <= 0.5 * p.damping**2:
        raise DomainError(
            f"preliminary estimate {theta_bar:.6g} <= k^2/2 = {0.5 * p.damping**2:g}: "
            "no real frequency for the second-stage input"
        )
    start = time.perf_counter()
    v = obs.control if v is None else v
    if v is None:
        raise DomainError("newton_two_stage needs the control used on [0, T]")
    model = LikelihoodModel(obs, v, steps_per_unit)
    pts = obs.grid.points
    i0 = int(np.searchsorted(pts, tau))
    if i0 >= pts.size - 1 or not math.isclose(pts[i0], tau, rel_tol=1e-12, abs_tol=1e-15):
        raise GridError(f"tau={tau:g} must be an interior grid node")
    sl = slice(i0, pts.size - 1)
    dz = model.dz[sl]
    dw = model.dw[sl]

    est = float(theta_bar)
    for _ in range(max(1, int(iterations))):
        traj = model.trajectory(est)
        x = traj.drift[sl]
        xp = traj.drift_sensitivity[sl]
        info = float((xp * xp) @ dw)
        if not info > fisher_floor:
            raise ConditioningError(f"partial Fisher information {info:.3g} is below {fisher_floor:g}")
        est = est + float(xp @ dz - (x * xp) @ dw) / info
    traj = model.trajectory(theta_bar)
    xp = traj.drift_sensitivity[sl]
    info = float((xp * xp) @ dw)

    std = rem = None
    diag = {"partial_fisher": info, "partial_fisher_rk4": float(traj.info[-1] - traj.info[i0])}
    if theta_true is not None:
        std = math.sqrt(info) * (est - theta_true)
        hstep = fd_rel_step * theta_bar
        xpp = (model.trajectory(theta_bar + hstep).drift[sl] - 2.0 * traj.drift[sl]
               + model.trajectory(theta_bar - hstep).drift[sl]) / hstep**2
        delta = theta_true - theta_bar
        rem = 0.5 * float((xp * xpp) @ dw) * delta**2 / math.sqrt(info)
        x_true = model.trajectory(theta_true).drift[sl]
        gap = x_true - traj.drift[sl] - xp * delta
        exact = float((xp * gap) @ dw) / math.sqrt(info)
        diag.update(remainder_exact=exact, leading=std - exact if iterations == 1 else None)
    return EstimateReport(
        estimate=est,
        method=TWO_STAGE,
        fisher_used=info,
        bracket=(0.0, math.inf),
        standardized_error=std,
        remainder=rem,
        tau=float(tau),
        seed=obs.seed,
        wall_ms=1e3 * (time.perf_counter() - start),
        diagnostics=diag,
    )


def two_stage_from_record(obs: ObservationRecord, tau: float, rho: float, bracket=(0.2, 5.0),
                          theta_true: Optional[float] = None,
                          steps_per_unit: float = DEFAULT_STEPS) -> EstimateReport:
    """Both stages on a recorded path generated by the adaptive design.

    The record must have been driven by the amplified power law on
    ``[0, tau)`` and by the input tuned to the preliminary estimate
    afterwards; both controls are rebuilt from the data.
    """
    pts = obs.grid.points
    i0 = int(np.searchsorted(pts, tau))
    if i0 >= pts.size - 1 or not math.isclose(pts[i0], tau, rel_tol=1e-9, abs_tol=1e-15):
        raise GridError(f"tau={tau:g} must be an interior grid node")
    tau = float(pts[i0])
    short = obs.restrict(tau)
    v1 = realize_real_control(amplified_power_law(obs.params, rho), short.grid)
    pre = preliminary_estimate(short, rho, bracket, v=v1, theta_true=theta_true,
                               steps_per_unit=steps_per_unit)
    v = stitched_control(obs.params, obs.grid, tau, rho, pre.estimate)
    rep = newton_two_stage(obs, tau, pre.estimate, v, theta_true=theta_true, steps_per_unit=steps_per_unit)
    rep.diagnostics["preliminary"] = pre.estimate
    rep.diagnostics["tau9_rho2"] = pre.diagnostics["tau9_rho2"]
    return rep
