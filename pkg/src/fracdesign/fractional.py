"""Fractional constants, Volterra kernels, the weight clock and the u <-> v transforms.

The observation noise is a fractional Brownian motion with Hurst index
``H`` in ``[1/2, 1)``.  Integrating the kernel ``k_H`` against it yields a
Gaussian martingale whose variance function ``w_H`` is used throughout the
package as the natural ("weight") clock.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

from .errors import DomainError, GridError, GridResolutionError

PHYSICAL_CLOCK = "physical_clock"
WEIGHT_CLOCK = "weight_clock"
U_DOMAIN = "u_domain"
V_DOMAIN = "v_domain"

# evaluation of sampled functions at many points is done in blocks
_BLOCK = 2048


def _check_hurst(hurst):
    if not (np.isfinite(hurst) and 0.5 <= hurst < 1.0):
        raise DomainError(f"hurst must lie in [1/2, 1), got {hurst!r}")


@dataclass(frozen=True)
class HurstConstants:
    """Constants attached to a Hurst index.

    ``kappa`` and ``lam`` are the normalizations of the fundamental
    martingale; ``lam`` stands for the constant usually written lambda.
    """

    hurst: float
    kappa: float
    lam: float

    def w(self, t):
        """Variance function of the fundamental martingale, ``w_H(t)``."""
        return eval_wH(t, self)

    def w_inv(self, theta):
        """Inverse of :meth:`w` (maps weight-clock time back to physical time)."""
        theta = np.asarray(theta, dtype=float)
        if np.any(theta < 0):
            raise DomainError("weight-clock time must be nonnegative")
        g = 2.0 - 2.0 * self.hurst
        out = (theta * 2.0 * self.lam * g) ** (1.0 / g)
        return out if out.ndim else float(out)

    def dw_dt(self, t):
        """Density of the weight clock, ``t^(1-2H) / (2 lam)``."""
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            out = t ** (1.0 - 2.0 * self.hurst) / (2.0 * self.lam)
        return out if out.ndim else float(out)

    def to_dict(self):
        return {"hurst": self.hurst, "kappa": self.kappa, "lambda": self.lam}


@lru_cache(maxsize=64)
def compute_constants(hurst: float) -> HurstConstants:
    """Evaluate ``kappa_H`` and ``lambda`` for a Hurst index in ``[1/2, 1)``.

    >>> c = compute_constants(0.5)
    >>> (c.kappa, c.lam)
    (1.0, 0.5)
    """
    hurst = float(hurst)
    _check_hurst(hurst)
    H = hurst
    kappa = 2.0 * H * math.gamma(1.5 - H) * math.gamma(0.5 + H)
    lam = H * math.gamma(3.0 - 2.0 * H) * math.gamma(H + 0.5) / (
        2.0 * (1.0 - H) * math.gamma(1.5 - H)
    )
    return HurstConstants(hurst=H, kappa=kappa, lam=lam)


def eval_kH(t, s, c: HurstConstants):
    """Kernel ``k_H(t, s) = s^(1/2-H) (t-s)^(1/2-H) / kappa_H`` for ``0 < s < t``."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0) or np.any(s >= t):
        raise DomainError("k_H(t, s) requires 0 < s < t")
    a = 0.5 - c.hurst
    out = s**a * (t - s) ** a / c.kappa
    return out if out.ndim else float(out)


def eval_KH(t: float, s: float, hurst: float) -> float:
    """Inverse kernel ``K_H(t, s) = H(2H-1) int_s^t r^(H-1/2) (r-s)^(H-3/2) dr``.

    The algebraic endpoint singularity at ``r = s`` is absorbed into the
    quadrature weight.  At ``H = 1/2`` the kernel is taken to be identically
    one so that the representation of ``Y`` through ``Z`` stays the identity.
    """
    _check_hurst(hurst)
    if not (0.0 < s < t):
        raise DomainError("K_H(t, s) requires 0 < s < t")
    if hurst == 0.5:
        return 1.0
    H = hurst
    val, _ = integrate.quad(
        lambda r: r ** (H - 0.5),
        s,
        t,
        weight="alg",
        wvar=(H - 1.5, 0.0),
        epsabs=0.0,
        epsrel=1e-13,
        limit=200,
    )
    return H * (2.0 * H - 1.0) * val


def eval_wH(t, c: HurstConstants):
    """Variance function ``w_H(t) = t^(2-2H) / (2 lam (2-2H))``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("w_H(t) is defined for t >= 0 only")
    g = 2.0 - 2.0 * c.hurst
    out = t**g / (2.0 * c.lam * g)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time points with a tag saying which clock is uniform."""

    points: np.ndarray
    uniform_in: Optional[str] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise GridError("a time grid needs at least 2 points")
        if not np.all(np.isfinite(pts)) or pts[0] < 0:
            raise GridError("grid points must be finite and nonnegative")
        if np.any(np.diff(pts) <= 0):
            raise GridError("grid points must be strictly increasing")
        if self.uniform_in not in (None, PHYSICAL_CLOCK, WEIGHT_CLOCK):
            raise GridError(f"unknown clock tag {self.uniform_in!r}")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        """Number of intervals."""
        return self.points.size - 1

    @property
    def start(self) -> float:
        return float(self.points[0])

    @property
    def horizon(self) -> float:
        return float(self.points[-1])

    def thetas(self, c: HurstConstants) -> np.ndarray:
        return eval_wH(self.points, c)

    def restrict(self, t_end: float) -> "TimeGrid":
        """Sub-grid of the points not exceeding ``t_end`` (which must be a node)."""
        idx = int(np.searchsorted(self.points, t_end, side="right"))
        if idx < 2 or not math.isclose(self.points[idx - 1], t_end, rel_tol=1e-12, abs_tol=0.0):
            raise GridError(f"{t_end} is not a node of the grid")
        return TimeGrid(self.points[:idx], self.uniform_in)

    @classmethod
    def uniform(cls, horizon: float, n: int, start: float = 0.0) -> "TimeGrid":
        return cls(np.linspace(start, horizon, int(n) + 1), PHYSICAL_CLOCK)

    @classmethod
    def weight_clock(cls, c: HurstConstants, horizon: float, n: int) -> "TimeGrid":
        """``n`` intervals that are equal in the weight clock on ``[0, horizon]``."""
        theta = np.linspace(0.0, eval_wH(horizon, c), int(n) + 1)
        pts = c.w_inv(theta)
        pts[-1] = horizon
        return cls(pts, WEIGHT_CLOCK)

    @classmethod
    def weight_clock_nodes(cls, c: HurstConstants, nodes, step: float) -> "TimeGrid":
        """Weight-clock grid on ``[0, nodes[-1]]`` containing every time in ``nodes``.

        Each segment between consecutive nodes is split uniformly in the
        weight clock with spacing at most ``step``.
        """
        nodes = [0.0] + [float(x) for x in nodes]
        pieces = []
        for a, b in zip(nodes[:-1], nodes[1:]):
            wa, wb = eval_wH(a, c), eval_wH(b, c)
            m = max(1, int(math.ceil((wb - wa) / step - 1e-9)))
            seg = c.w_inv(np.linspace(wa, wb, m + 1))
            seg[0], seg[-1] = a, b
            pieces.append(seg if not pieces else seg[1:])
        return cls(np.concatenate(pieces), WEIGHT_CLOCK)

    @classmethod
    def geometric(
        cls,
        horizon: float,
        ratio: float = 1.05,
        t0: Optional[float] = None,
        max_step: Optional[float] = None,
    ) -> "TimeGrid":
        """Default transform grid: geometric growth from ``t0`` capped at ``max_step``.

        ``t0`` defaults to ``1e-6 * horizon`` and ``max_step`` to ``horizon / 256``.
        """
        if ratio <= 1.0:
            raise GridError("geometric ratio must exceed 1")
        t0 = 1e-6 * horizon if t0 is None else float(t0)
        max_step = horizon / 256.0 if max_step is None else float(max_step)
        if not (0 < t0 < horizon):
            raise GridError("need 0 < t0 < horizon")
        pts = [t0]
        step = t0 * (ratio - 1.0)
        while pts[-1] < horizon:
            pts.append(pts[-1] + min(step, max_step))
            step *= ratio
        pts[-1] = horizon
        if pts[-1] - pts[-2] < 0.25 * min(step, max_step) and len(pts) > 2:
            del pts[-2]
        return cls(np.array(pts), None)


@dataclass(frozen=True, eq=False)
class SampledControl:
    """Control samples on a grid, tagged as physical input ``u`` or transform ``v``.

    ``func`` optionally evaluates the control exactly at arbitrary times;
    without it, evaluation between nodes is linear interpolation.  ``spec``
    keeps a reference to the design the samples came from, when there is one.
    """

    grid: TimeGrid
    values: np.ndarray
    clock: str
    func: Optional[Callable] = None
    spec: Optional[object] = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.points.shape:
            raise GridError("control values must match the grid length")
        if not np.all(np.isfinite(vals)):
            raise DomainError("control values must be finite")
        if self.clock not in (U_DOMAIN, V_DOMAIN):
            raise DomainError(f"unknown control clock {self.clock!r}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def evaluate(self, t):
        """Control value at arbitrary times (exact when ``func`` is present)."""
        t = np.asarray(t, dtype=float)
        if self.func is not None:
            return np.asarray(self.func(t), dtype=float) * np.ones_like(t)
        return np.interp(t, self.grid.points, self.values)

    def stage_values(self, t_left, t_mid, t_right):
        """Values at Runge-Kutta stage times; right ends are read as left limits."""
        return (
            self.evaluate(t_left),
            self.evaluate(t_mid),
            self.evaluate(np.nextafter(t_right, -np.inf)),
        )


def zero_control(grid: TimeGrid, clock: str = V_DOMAIN) -> SampledControl:
    return SampledControl(grid, np.zeros(grid.points.size), clock, func=lambda t: np.zeros_like(t))


# ---------------------------------------------------------------------------
# product-integration rules on [0, 1] for weights x^a (1-x)^b

def _graded_nodes(m: int, q: float = 3.0) -> np.ndarray:
    """Nodes on [0, 1] clustered algebraically at both endpoints."""
    s = np.linspace(0.0, 1.0, m + 1)
    x = s**q / (s**q + (1.0 - s) ** q)
    x[0], x[-1] = 0.0, 1.0
    return x


def _beta_moments(lo, hi, a, b):
    """Zeroth and first moments of ``x^a (1-x)^b`` over cells ``[lo, hi]`` in ``[0, 1/2]``."""
    m0 = special.beta(a + 1, b + 1) * (
        special.betainc(a + 1, b + 1, hi) - special.betainc(a + 1, b + 1, lo)
    )
    m1 = special.beta(a + 2, b + 1) * (
        special.betainc(a + 2, b + 1, hi) - special.betainc(a + 2, b + 1, lo)
    )
    return m0, m1


@lru_cache(maxsize=32)
def _product_rule(a: float, b: float, m: int = 400):
    """Hat-function weights for ``int_0^1 x^a (1-x)^b f(x) dx``.

    Cell moments are computed from the regularized incomplete beta
    function, in the reflected variable ``1 - x`` on the right half so the
    small cells next to ``x = 1`` do not suffer cancellation.
    """
    if m % 2:
        m += 1
    x = _graded_nodes(m)
    x[m // 2] = 0.5
    W = np.zeros(m + 1)
    h = np.diff(x)
    left = slice(0, m // 2)
    lo, hi = x[:-1][left], x[1:][left]
    m0, m1 = _beta_moments(lo, hi, a, b)
    W[:-1][left] += (hi * m0 - m1) / h[left]
    W[1:][left] += (m1 - lo * m0) / h[left]
    right = slice(m // 2, m)
    ylo, yhi = 1.0 - x[1:][right], 1.0 - x[:-1][right]
    m0, m1 = _beta_moments(ylo, yhi, b, a)
    W[:-1][right] += (m1 - ylo * m0) / h[right]
    W[1:][right] += (yhi * m0 - m1) / h[right]
    x.flags.writeable = False
    W.flags.writeable = False
    return x, W


def _apply_rule(evaluator, times, x, W):
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.empty(times.size)
    for i in range(0, times.size, _BLOCK):
        tt = times[i : i + _BLOCK]
        out[i : i + _BLOCK] = evaluator(np.outer(tt, x)) @ W
    return out


def _control_evaluator(ctrl: SampledControl, c: HurstConstants):
    if ctrl.func is not None:
        return ctrl.evaluate
    pts = ctrl.grid.points
    interior = pts[1:-1]
    if interior.size and np.max(np.diff(pts)[1:] / np.maximum(pts[1:-1], 1e-300)) > 0.5:
        rec = int(math.ceil(2 * pts.size))
        raise GridResolutionError(
            "grid too coarse to differentiate a sampled control; refine to "
            f"at least {rec} points (relative spacing <= 0.5)",
            recommended=rec,
        )
    return ctrl.evaluate


def v_from_u(u: SampledControl, c: HurstConstants, *, nodes: int = 400, rel_step: float = 1e-3) -> SampledControl:
    """Transform a physical input ``u`` into ``v = d/dw_H int_0^t k_H(t,s) u(s) ds``.

    The inner integral is a product integral with exact weights for the
    kernel singularities at ``s = 0`` and ``s = t`` on a mesh graded at both
    ends; the derivative is a centered difference in the weight clock.
    """
    if u.clock != U_DOMAIN:
        raise DomainError("v_from_u expects a control in the u domain")
    if c.hurst == 0.5:
        return SampledControl(u.grid, u.values, V_DOMAIN, func=u.func)
    if u.grid.start <= 0.0:
        raise GridError("v_from_u needs t0 > 0 when H > 1/2 (singularity guard)")
    ev = _control_evaluator(u, c)
    a = 0.5 - c.hurst
    x, W = _product_rule(a, a, nodes)

    def primitive(t):
        return t ** (2 * a + 1) / c.kappa * _apply_rule(ev, t, x, W)

    def v_at(t):
        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t).ravel()
        # one-sided limit at the origin, where the centered difference is undefined
        th = np.maximum(eval_wH(flat, c), 1e-10 * eval_wH(u.grid.horizon, c))
        out = (primitive(c.w_inv(th * (1 + rel_step))) - primitive(c.w_inv(th * (1 - rel_step)))) / (
            2 * rel_step * th
        )
        return out.reshape(t.shape) if t.ndim else float(out[0])

    return SampledControl(u.grid, v_at(u.grid.points), V_DOMAIN, func=v_at)


def u_from_v(v: SampledControl, c: HurstConstants, *, nodes: int = 400) -> SampledControl:
    """Transform ``v`` back into ``u = d/dt int_0^t K_H(t,s) v(s) dw_H(s)``.

    ``K_H(t, t) = 0`` for ``H > 1/2``, so the time derivative passes under
    the integral and leaves ``H(2H-1)/(2 lam) int_0^1 x^(1-2H) (1-x)^(H-3/2)
    v(t x) dx``, which is evaluated by product integration.
    """
    if v.clock != V_DOMAIN:
        raise DomainError("u_from_v expects a control in the v domain")
    if c.hurst == 0.5:
        return SampledControl(v.grid, v.values, U_DOMAIN, func=v.func)
    ev = _control_evaluator(v, c)
    H = c.hurst
    x, W = _product_rule(1.0 - 2.0 * H, H - 1.5, nodes)
    pref = H * (2.0 * H - 1.0) / (2.0 * c.lam)

    def u_at(t):
        t = np.asarray(t, dtype=float)
        out = pref * _apply_rule(ev, np.atleast_1d(t).ravel(), x, W)
        return out.reshape(t.shape) if t.ndim else float(out[0])

    return SampledControl(v.grid, u_at(v.grid.points), U_DOMAIN, func=u_at)
