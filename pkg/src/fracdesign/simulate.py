"""Simulation of fBm, the fundamental martingale and the two observation pipelines."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import linalg, special

from .errors import DomainError, GridError, GridResolutionError, NumericalError
from .fractional import (
    HurstConstants,
    PHYSICAL_CLOCK,
    SampledControl,
    TimeGrid,
    U_DOMAIN,
    V_DOMAIN,
    compute_constants,
    eval_wH,
)
from .state import DEFAULT_STEPS, SystemParams, ZetaSolver, solve_physical_x

_CHOLESKY_MAX = 2048
_MIN_TRANSFORM_INTERVALS = 32


def _rng(seed):
    if seed is None or int(seed) < 0:
        raise DomainError("seed must be a nonnegative integer")
    return np.random.default_rng(int(seed))


@dataclass(frozen=True, eq=False)
class FbmPath:
    grid: TimeGrid
    values: np.ndarray
    hurst: float
    seed: int


def _require_uniform(grid: TimeGrid):
    d = np.diff(grid.points)
    if grid.start != 0.0 or not np.allclose(d, d[0], rtol=1e-9, atol=0.0):
        raise GridError("fBm generation needs a grid uniform in physical time starting at 0")
    return float(grid.horizon / grid.n)


def fgn_autocovariance(hurst: float, n: int, step: float) -> np.ndarray:
    """Autocovariance of fractional Gaussian noise at lags ``0..n``."""
    k = np.arange(n + 1, dtype=float)
    h2 = 2.0 * hurst
    return 0.5 * step**h2 * (np.abs(k + 1) ** h2 - 2.0 * k**h2 + np.abs(k - 1) ** h2)


def _fgn(hurst, n, step, rng):
    gamma = fgn_autocovariance(hurst, n, step)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eig = np.fft.fft(row).real
    m = row.size
    if eig.min() >= -1e-12 * eig.max():
        eig = np.clip(eig, 0.0, None)
        w = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        return np.fft.fft(np.sqrt(eig / m) * w).real[:n]
    if n > _CHOLESKY_MAX:
        raise NumericalError("circulant embedding is not nonnegative and n is too large for Cholesky")
    cov = linalg.toeplitz(gamma[:n])
    return linalg.cholesky(cov, lower=True) @ rng.standard_normal(n)


def simulate_fbm(hurst: float, grid: TimeGrid, seed: int) -> FbmPath:
    """Exact fBm sample on a uniform grid by circulant embedding.

    Falls back to a dense Cholesky factor (``n <= 2048``) if the embedding
    has negative eigenvalues.
    """
    compute_constants(hurst)
    step = _require_uniform(grid)
    rng = _rng(seed)
    inc = _fgn(hurst, grid.n, step, rng)
    vals = np.concatenate([[0.0], np.cumsum(inc)])
    return FbmPath(grid, vals, float(hurst), int(seed))


def simulate_martingale_increments(c: HurstConstants, grid: TimeGrid, seed: int) -> np.ndarray:
    """Independent ``N(0, w_H(t_{i+1}) - w_H(t_i))`` increments."""
    rng = _rng(seed)
    dw = np.diff(eval_wH(grid.points, c))
    return rng.standard_normal(grid.n) * np.sqrt(dw)


@dataclass(frozen=True, eq=False)
class ObservationRecord:
    """Observed path on a grid, with the control and seed that produced it.

    ``control`` is the sampled control whose ``spec`` (when set) is the
    symbolic :class:`ControlSpec`.
    """

    grid: TimeGrid
    z_values: np.ndarray
    params: SystemParams
    seed: Optional[int] = None
    control: Optional[SampledControl] = None
    y_values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.z_values.shape != self.grid.points.shape:
            raise GridError("z_values must match the grid")
        if self.y_values is not None and self.y_values.shape != self.grid.points.shape:
            raise GridError("y_values must match the grid")

    @property
    def control_spec(self):
        return None if self.control is None else self.control.spec

    def restrict(self, t_end: float) -> "ObservationRecord":
        """The record on ``[t0, t_end]`` (``t_end`` must be a grid node)."""
        g = self.grid.restrict(t_end)
        n = g.points.size
        ctrl = self.control
        if ctrl is not None:
            ctrl = SampledControl(g, ctrl.values[:n], ctrl.clock, func=ctrl.func, spec=ctrl.spec)
        y = None if self.y_values is None else self.y_values[:n]
        return replace(self, grid=g, z_values=self.z_values[:n], control=ctrl, y_values=y)

    def to_csv(self, path, sidecar: bool = True):
        """Write ``t, Z[, Y]`` rows and a JSON sidecar with params, control spec and seed."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "Z"] + (["Y"] if self.y_values is not None else []))
            for i, t in enumerate(self.grid.points):
                row = [repr(float(t)), repr(float(self.z_values[i]))]
                if self.y_values is not None:
                    row.append(repr(float(self.y_values[i])))
                w.writerow(row)
        if sidecar:
            spec = self.control_spec
            meta = {
                "params": self.params.to_dict(),
                "control": None if spec is None else spec.to_dict(),
                "control_clock": None if self.control is None else self.control.clock,
                "seed": self.seed,
            }
            with open(str(path) + ".json", "w") as fh:
                json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, path, params: Optional[SystemParams] = None):
        """Read a record written by :meth:`to_csv` (sidecar optional when ``params`` given)."""
        from .design import ControlSpec, realize_real_control

        data = np.genfromtxt(path, delimiter=",", names=True)
        t = np.atleast_1d(data["t"])
        grid = TimeGrid(t)
        meta = {}
        try:
            with open(str(path) + ".json") as fh:
                meta = json.load(fh)
        except FileNotFoundError:
            if params is None:
                raise DomainError(f"no sidecar for {path}; pass params explicitly")
        if params is None:
            d = meta["params"]
            params = SystemParams(d["theta"], d["k"], d["hurst"])
        control = None
        if meta.get("control"):
            control = realize_real_control(ControlSpec.from_dict(meta["control"]), grid)
        y = np.atleast_1d(data["Y"]) if "Y" in data.dtype.names else None
        return cls(grid, np.atleast_1d(data["Z"]), params, meta.get("seed"), control, y)


def simulate_observation(
    params: SystemParams,
    v: Optional[SampledControl],
    grid: TimeGrid,
    seed: Optional[int],
    noise: bool = True,
    increments: Optional[np.ndarray] = None,
    steps_per_unit: float = DEFAULT_STEPS,
) -> ObservationRecord:
    """Simulate ``dZ = X dw + dN`` with ``X = lam l* zeta`` at the grid nodes.

    The drift enters by left-point sums against the weight clock and the
    martingale by exact Gaussian increments.  ``noise=False`` drops the
    martingale (a deterministic test hook); ``increments`` supplies the
    martingale increments explicitly.
    """
    if v is not None and v.clock != V_DOMAIN:
        raise DomainError("simulate_observation expects a v-domain control")
    drift = ZetaSolver(params, v, grid, steps_per_unit).solve().drift
    dw = np.diff(eval_wH(grid.points, params.constants))
    dz = drift[:-1] * dw
    if increments is not None:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != dw.shape:
            raise GridError("increments must have one entry per grid interval")
        dz = dz + increments
    elif noise:
        dz = dz + simulate_martingale_increments(params.constants, grid, seed)
    z = np.concatenate([[0.0], np.cumsum(dz)])
    return ObservationRecord(grid, z, params, None if seed is None else int(seed), v)


def simulate_Y_physical(
    params: SystemParams,
    u: Optional[SampledControl],
    grid: TimeGrid,
    seed: Optional[int],
    noise: bool = True,
    steps_per_unit: float = DEFAULT_STEPS,
) -> ObservationRecord:
    """Simulate ``Y_t = int_0^t x ds + V^H_t`` and fill ``Z`` by :func:`transform_Y_to_Z`."""
    if u is not None and u.clock != U_DOMAIN:
        raise DomainError("simulate_Y_physical expects a u-domain control")
    _require_uniform(grid)
    traj = solve_physical_x(params, u, grid, with_sensitivity=False, steps_per_unit=steps_per_unit)
    y = traj.x_integral.copy()
    if noise:
        y = y + simulate_fbm(params.hurst, grid, seed).values
    rec = ObservationRecord(grid, np.zeros_like(y), params, None if seed is None else int(seed), u, y)
    return transform_Y_to_Z(rec, params.constants)


def _kernel_cell_weights(t, points, c):
    """``int_{t_j}^{t_{j+1}} k_H(t, s) ds`` for the cells below ``t``.

    With ``x = s/t`` the integrand is ``x^a (1-x)^a`` (``a = 1/2 - H``), so
    each cell is a difference of regularized incomplete beta values; cells
    in the right half use the reflected variable to avoid cancellation.
    """
    a = 0.5 - c.hurst
    x = points / t
    lo, hi = x[:-1], x[1:]
    B = special.beta(a + 1, a + 1)
    left = hi <= 0.5
    out = np.empty(lo.size)
    out[left] = special.betainc(a + 1, a + 1, hi[left]) - special.betainc(a + 1, a + 1, lo[left])
    r = ~left
    out[r] = special.betainc(a + 1, a + 1, 1.0 - lo[r]) - special.betainc(a + 1, a + 1, 1.0 - hi[r])
    return B * t ** (2 * a + 1) / c.kappa * out


def transform_Y_to_Z(y: ObservationRecord, c: HurstConstants) -> ObservationRecord:
    """``Z_t = int_0^t k_H(t, s) dY_s`` with ``Y`` read as piecewise linear.

    Each cell's kernel integral is exact for the singular weight; at
    ``H = 1/2`` the transform is the identity.
    """
    if y.y_values is None:
        raise DomainError("transform_Y_to_Z needs y_values")
    if c.hurst == 0.5:
        return replace(y, z_values=y.y_values.copy())
    pts = y.grid.points
    if y.grid.n < _MIN_TRANSFORM_INTERVALS:
        raise GridResolutionError(
            f"grid has {y.grid.n} intervals; the kernel transform needs at least "
            f"{_MIN_TRANSFORM_INTERVALS} to resolve the singularity near 0",
            recommended=_MIN_TRANSFORM_INTERVALS,
        )
    slope = np.diff(y.y_values) / np.diff(pts)
    W = _transform_matrix(pts.tobytes(), c.hurst)
    return replace(y, z_values=W @ slope)


@lru_cache(maxsize=8)
def _transform_matrix(points: bytes, hurst: float) -> np.ndarray:
    """Row ``i`` holds the cell weights of ``Z(t_i)``; cached per grid."""
    pts = np.frombuffer(points, dtype=float)
    c = compute_constants(hurst)
    W = np.zeros((pts.size, pts.size - 1))
    for i in range(1, pts.size):
        W[i, :i] = _kernel_cell_weights(pts[i], pts[: i + 1], c)
    W.flags.writeable = False
    return W
