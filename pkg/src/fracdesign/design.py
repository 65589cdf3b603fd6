"""Optimal input families, their real realizations and energy accounting."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import DomainError
from .fractional import (
    HurstConstants,
    SampledControl,
    TimeGrid,
    U_DOMAIN,
    V_DOMAIN,
    compute_constants,
    eval_wH,
)
from .state import SystemParams

POWER_LAW = "power_law"
MODULATED = "modulated_power_law"
CUSTOM = "custom_samples"
FAMILIES = (POWER_LAW, MODULATED, CUSTOM)


@dataclass(frozen=True)
class ControlSpec:
    """Symbolic input: ``scale * sqrt(2 lam) t^(H-1/2)``, optionally modulated.

    For the modulated family the real profile carries an extra ``sqrt(2)``
    and the factor ``cos(frequency * t + phase)``, so its mean square per
    unit of the weight clock is that of the unmodulated profile.
    """

    family: str
    scale: float = 1.0
    frequency: Optional[float] = None
    phase: Optional[float] = None
    hurst: float = 0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown control family {self.family!r}")
        if self.family == MODULATED and self.frequency is None:
            raise DomainError("modulated_power_law requires a frequency")
        if self.family == POWER_LAW and self.frequency is not None:
            raise DomainError("power_law does not take a frequency")
        if self.family != CUSTOM and not self.scale > 0:
            raise DomainError("designed inputs need scale > 0")
        compute_constants(self.hurst)

    @property
    def constants(self) -> HurstConstants:
        return compute_constants(self.hurst)

    def v_profile(self, t):
        """Real v-domain profile at times ``t``."""
        if self.family == CUSTOM:
            raise DomainError("custom_samples has no symbolic profile")
        t = np.asarray(t, dtype=float)
        c = self.constants
        amp = self.scale * math.sqrt(2.0 * c.lam) * t ** (self.hurst - 0.5)
        if self.family == MODULATED:
            amp = amp * math.sqrt(2.0) * np.cos(self.frequency * t + (self.phase or 0.0))
        return amp

    def u_profile(self, t):
        """Closed-form u-domain counterpart (power law only).

        The power law is an eigenfunction of the u -> v transform, so the
        physical input is ``scale * kappa / sqrt(2 lam) t^(H-1/2)``.  The
        modulated family has no such closed form away from ``H = 1/2``.
        """
        t = np.asarray(t, dtype=float)
        c = self.constants
        if self.family == POWER_LAW:
            return self.scale * c.kappa / math.sqrt(2.0 * c.lam) * t ** (self.hurst - 0.5)
        if self.family == MODULATED and self.hurst == 0.5:
            return self.v_profile(t)
        raise DomainError("closed-form u profile exists for the power law (or H = 1/2) only")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            family=d["family"],
            scale=float(d.get("scale", 1.0)),
            frequency=None if d.get("frequency") is None else float(d["frequency"]),
            phase=None if d.get("phase") is None else float(d["phase"]),
            hurst=float(d.get("hurst", 0.5)),
        )


def resonance_frequency(p: SystemParams) -> float:
    """``sqrt(theta - k^2/2)``; only real in the underdamped case."""
    gap = p.theta - 0.5 * p.damping**2
    if gap <= 0:
        raise DomainError(
            f"theta={p.theta:g} <= k^2/2={0.5 * p.damping**2:g}: no real resonance frequency"
        )
    return math.sqrt(gap)


def design_optimal_input(p: SystemParams, scale: float = 1.0) -> ControlSpec:
    """Pick the optimal family for ``p``: power law when ``k^2 >= 2 theta``, else modulated.

    >>> design_optimal_input(SystemParams(1.0, 2.0)).family
    'power_law'
    """
    if p.case == 1:
        return ControlSpec(POWER_LAW, scale=scale, hurst=p.hurst)
    return ControlSpec(MODULATED, scale=scale, frequency=resonance_frequency(p), phase=0.0, hurst=p.hurst)


def realize_real_control(spec: ControlSpec, grid: TimeGrid) -> SampledControl:
    """Sample the real v-domain profile of ``spec`` on ``grid``."""
    if spec.family == CUSTOM:
        raise DomainError("custom_samples controls are built directly as SampledControl")
    return SampledControl(grid, spec.v_profile(grid.points), V_DOMAIN, func=spec.v_profile, spec=spec)


def physical_control(spec: ControlSpec, grid: TimeGrid) -> SampledControl:
    """u-domain samples for specs with a closed-form physical input."""
    return SampledControl(grid, spec.u_profile(grid.points), U_DOMAIN, func=spec.u_profile, spec=spec)


def control_energy(v: SampledControl, c: HurstConstants) -> float:
    """Time-averaged energy ``(1/T) int_0^T |v|^2 dw_H`` of a v-domain control.

    With a symbolic ``func`` the integral is adaptive in physical time,
    where the power-law profile has constant energy density; the
    ``t^(1-2H)`` density of the clock goes into the quadrature weight on the
    first unit interval.  Without ``func`` it is a trapezoid sum in the
    weight clock over the samples.
    """
    if v.clock != V_DOMAIN:
        raise DomainError("control_energy expects a v-domain control")
    T = v.grid.horizon
    t0 = v.grid.start
    if v.func is None:
        th = eval_wH(v.grid.points, c)
        return float(np.trapezoid(v.values**2, th) / T)
    e = 1.0 - 2.0 * c.hurst
    sq = lambda t: float(v.func(np.array(t))) ** 2 / (2.0 * c.lam)
    nodes = np.linspace(t0, T, int(math.ceil(T - t0)) + 1)
    total = 0.0
    for i, (a, b) in enumerate(zip(nodes[:-1], nodes[1:])):
        if i == 0 and a == 0.0 and e != 0.0:
            val = integrate.quad(sq, a, b, weight="alg", wvar=(e, 0.0), epsabs=0.0, epsrel=1e-12)[0]
        else:
            val = integrate.quad(lambda t: sq(t) * t**e, a, b, epsabs=0.0, epsrel=1e-12, limit=200)[0]
        total += val
    return total / T
