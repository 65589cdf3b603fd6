"""Transformed state dynamics, fundamental matrix and the physical oscillator."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _ode
from .errors import ConditioningError, DomainError, GridError
from .fractional import (
    HurstConstants,
    SampledControl,
    TimeGrid,
    U_DOMAIN,
    V_DOMAIN,
    compute_constants,
    eval_wH,
)

DEFAULT_STEPS = 4096
# the state starts from rest at the grid origin; a later origin must be
# negligible on the weight clock
_ORIGIN_TOL = 1e-6


@dataclass(frozen=True)
class SystemParams:
    """Drift parameter ``theta``, damping ``k`` and Hurst index of the model."""

    theta: float
    damping: float
    hurst: float = 0.5
    constants: Optional[HurstConstants] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("theta", "damping"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise DomainError(f"{name} must be a positive finite number, got {val!r}")
        c = compute_constants(float(self.hurst))
        if self.constants is not None and (
            self.constants.hurst != c.hurst
            or not math.isclose(self.constants.kappa, c.kappa, rel_tol=1e-12)
            or not math.isclose(self.constants.lam, c.lam, rel_tol=1e-12)
        ):
            raise DomainError("constants are inconsistent with hurst")
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "damping", float(self.damping))
        object.__setattr__(self, "hurst", float(self.hurst))
        object.__setattr__(self, "constants", c)

    @property
    def lam(self) -> float:
        return self.constants.lam

    @property
    def case(self) -> int:
        """1 when ``k^2 >= 2 theta`` (overdamped side), else 2."""
        return 1 if self.damping**2 >= 2.0 * self.theta else 2

    def with_theta(self, theta: float) -> "SystemParams":
        return replace(self, theta=float(theta))

    def to_dict(self):
        return {"theta": self.theta, "k": self.damping, "hurst": self.hurst}


def eval_system_matrices(t: float, p: SystemParams):
    """Return ``(ell, A0, A, b)`` at time ``t > 0``."""
    if not t > 0:
        raise DomainError("system matrices are evaluated at t > 0 only")
    q = t ** (2.0 * p.hurst - 1.0)
    ell = np.array([q, 1.0, 0.0, 0.0])
    A0 = np.array([[0.0, 1.0], [-p.theta, -p.damping]])
    A = np.array([[q, 1.0], [q * q, q]])
    b = np.array([0.0, 0.0, 1.0, q])
    return ell, A0, A, b


def weight_plan(grid: TimeGrid, c: HurstConstants, steps_per_unit: float) -> _ode.Plan:
    grade = 1.0 if c.hurst == 0.5 else 4.0
    return _ode.Plan(grid.points, lambda t: eval_wH(t, c), c.w_inv, steps_per_unit, grade)


def physical_plan(grid: TimeGrid, steps_per_unit: float) -> _ode.Plan:
    ident = lambda t: np.array(t, dtype=float)
    return _ode.Plan(grid.points, ident, ident, steps_per_unit)


def _check_origin(grid: TimeGrid, c: HurstConstants):
    if grid.start > 0 and eval_wH(grid.start, c) > _ORIGIN_TOL * eval_wH(grid.horizon, c):
        raise GridError(
            "the state starts from rest at t=0; the grid must start at 0 or within "
            f"{_ORIGIN_TOL:g} of the horizon on the weight clock (got t0={grid.start:g})"
        )


def _control_fn(ctrl: Optional[SampledControl], clock: str):
    if ctrl is None:
        return None
    if ctrl.clock != clock:
        raise DomainError(f"expected a control in the {clock}, got {ctrl.clock}")
    return ctrl.evaluate


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    """State path on a grid with optional theta-sensitivity.

    ``info`` holds the running Fisher integral ``lam^2 int (l* dzeta)^2 dw``
    accumulated with the same RK4 steps as the state.
    """

    grid: TimeGrid
    zeta: np.ndarray
    dzeta_dtheta: Optional[np.ndarray]
    params: SystemParams
    info: Optional[np.ndarray] = None

    def _ell_dot(self, arr):
        q = self.grid.points ** (2.0 * self.params.hurst - 1.0)
        return self.params.lam * (q * arr[:, 0] + arr[:, 1])

    @property
    def drift(self) -> np.ndarray:
        """``X(t) = lam l(t)* zeta(t)`` at the grid nodes."""
        return self._ell_dot(self.zeta)

    @property
    def drift_sensitivity(self) -> np.ndarray:
        if self.dzeta_dtheta is None:
            raise DomainError("trajectory was solved without sensitivity")
        return self._ell_dot(self.dzeta_dtheta)

    def to_csv(self, path):
        """Debug export: one row per node with t, zeta and (if present) dzeta."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["t"] + [f"zeta{i}" for i in range(1, 5)]
            if self.dzeta_dtheta is not None:
                head += [f"dzeta{i}" for i in range(1, 5)]
            w.writerow(head)
            for i, t in enumerate(self.grid.points):
                row = [repr(float(t))] + [repr(float(x)) for x in self.zeta[i]]
                if self.dzeta_dtheta is not None:
                    row += [repr(float(x)) for x in self.dzeta_dtheta[i]]
                w.writerow(row)


class ZetaSolver:
    """Reusable solver for one (control, grid) pair and varying theta.

    The substep plan and control stage values are built once; each call to
    :meth:`solve` only runs the compiled integrator.
    """

    def __init__(self, p: SystemParams, v: Optional[SampledControl], grid: TimeGrid,
                 steps_per_unit: float = DEFAULT_STEPS):
        c = p.constants
        _check_origin(grid, c)
        self.params = p
        self.grid = grid
        self.plan = weight_plan(grid, c, steps_per_unit)
        self.stages = self.plan.controls(_control_fn(v, V_DOMAIN))
        e = 2.0 * p.hurst - 1.0
        self.powers = self.plan.powers(e)
        self.node_powers = grid.points**e

    def solve(self, theta: Optional[float] = None) -> StateTrajectory:
        p = self.params if theta is None else self.params.with_theta(theta)
        n = self.grid.points.size
        z = np.zeros((n, 4))
        dz = np.zeros((n, 4))
        info = np.zeros(n)
        pl = self.plan
        _ode.zeta_path(*self.powers, pl.h, pl.ends, *self.stages,
                       p.lam, p.theta, p.damping, z, dz, info)
        return StateTrajectory(self.grid, z, dz, p, info)

    def drift(self, theta: Optional[float] = None) -> np.ndarray:
        """Drift ``lam l* zeta`` at the grid nodes, without sensitivities."""
        p = self.params if theta is None else self.params.with_theta(theta)
        x = np.zeros(self.grid.points.size)
        pl = self.plan
        _ode.drift_path(*self.powers, pl.h, pl.ends, *self.stages,
                        p.lam, p.theta, p.damping, self.node_powers, x)
        return x

    def drift_gap(self, theta_a: float, theta_b: float) -> np.ndarray:
        """Running ``int |X(theta_a) - X(theta_b)|^2 dw`` at the grid nodes."""
        p = self.params
        out = np.zeros(self.grid.points.size)
        pl = self.plan
        _ode.drift_gap(*self.powers, pl.h, pl.ends, *self.stages,
                       p.lam, float(theta_a), float(theta_b), p.damping, out)
        return out


def solve_zeta(p: SystemParams, v: Optional[SampledControl], grid: TimeGrid,
               with_sensitivity: bool = True, steps_per_unit: float = DEFAULT_STEPS) -> StateTrajectory:
    """Integrate the transformed state from rest on the weight clock.

    ``v=None`` is the zero control.  The integration runs RK4 with
    ``steps_per_unit`` steps per unit of weight-clock time, subdividing
    every grid interval as needed.
    """
    traj = ZetaSolver(p, v, grid, steps_per_unit).solve()
    if not with_sensitivity:
        traj = replace(traj, dzeta_dtheta=None, info=None)
    return traj


@dataclass(frozen=True, eq=False)
class FundamentalMatrixPath:
    grid: TimeGrid
    phi: np.ndarray
    phi_inv: np.ndarray
    params: SystemParams


def solve_fundamental_matrix(p: SystemParams, grid: TimeGrid,
                             steps_per_unit: float = DEFAULT_STEPS,
                             max_condition: float = 1e12) -> FundamentalMatrixPath:
    """Propagator ``phi`` of the homogeneous state equation, anchored at the grid origin."""
    c = p.constants
    plan = weight_plan(grid, c, steps_per_unit)
    n = grid.points.size
    phi = np.zeros((n, 4, 4))
    phi_inv = np.zeros((n, 4, 4))
    _ode.fundamental_path(*plan.powers(2.0 * p.hurst - 1.0), plan.h, plan.ends,
                          p.lam, p.theta, p.damping, phi, phi_inv)
    cond = np.linalg.norm(phi, 2, axis=(1, 2)) * np.linalg.norm(phi_inv, 2, axis=(1, 2))
    worst = int(np.argmax(cond))
    if not np.all(np.isfinite(cond)) or cond[worst] > max_condition:
        raise ConditioningError(
            f"fundamental matrix condition number {cond[worst]:.3g} exceeds {max_condition:.0e} "
            f"at t={grid.points[worst]:g}; shorten the horizon"
        )
    return FundamentalMatrixPath(grid, phi, phi_inv, p)


def variation_of_constants(fm: FundamentalMatrixPath, v: SampledControl) -> np.ndarray:
    """``zeta(t) = phi(t) int_0^t phi^-1(s) b(s) v(s) dw(s)`` by trapezoid sums on the grid.

    The integrand is only Hoelder continuous at the origin for ``H > 1/2``,
    which lowers the convergence order below two (about ``h^(4/3)`` for the
    power-law input at ``H = 0.7``).
    """
    p = fm.params
    t = fm.grid.points
    q = t ** (2.0 * p.hurst - 1.0)
    b = np.stack([np.zeros_like(t), np.zeros_like(t), np.ones_like(t), q], axis=1)
    vals = np.asarray(v.evaluate(t), dtype=float)
    integrand = np.einsum("nij,nj->ni", fm.phi_inv, b) * vals[:, None]
    dw = np.diff(eval_wH(t, p.constants))
    cum = np.zeros_like(integrand)
    cum[1:] = np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * dw[:, None], axis=0)
    return np.einsum("nij,nj->ni", fm.phi, cum)


@dataclass(frozen=True, eq=False)
class PhysicalTrajectory:
    """Physical position ``x`` with sensitivity, the running integral of ``x``
    and the running Fisher integral ``int (dx/dtheta)^2 dt``."""

    grid: TimeGrid
    x: np.ndarray
    velocity: np.ndarray
    dx_dtheta: Optional[np.ndarray]
    x_integral: np.ndarray
    info: Optional[np.ndarray]


def solve_physical_x(p: SystemParams, u: Optional[SampledControl], grid: TimeGrid,
                     with_sensitivity: bool = True,
                     steps_per_unit: float = DEFAULT_STEPS) -> PhysicalTrajectory:
    """Integrate ``x'' + k x' + theta x = u`` from rest, optionally with ``dx/dtheta``."""
    if grid.start != 0.0:
        raise GridError("the physical system starts from rest at t=0")
    plan = physical_plan(grid, steps_per_unit)
    ul, um, ur = plan.controls(_control_fn(u, U_DOMAIN))
    out = np.zeros((grid.points.size, 6))
    _ode.physical_path(plan.h, plan.ends, ul, um, ur, p.theta, p.damping, out)
    return PhysicalTrajectory(
        grid,
        out[:, 0],
        out[:, 1],
        out[:, 2] if with_sensitivity else None,
        out[:, 4],
        out[:, 5] if with_sensitivity else None,
    )
