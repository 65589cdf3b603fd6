"""Covariance operator K_T, its spectrum, the Upsilon polynomial and the Laplace identity."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import _ode
from .errors import DomainError, NumericalError
from .fisher import asymptotic_rate
from .fractional import TimeGrid
from .state import DEFAULT_STEPS, SystemParams, weight_plan

MAX_NODES = 4096


def eval_G(t: float, sigma: float, p: SystemParams, steps_per_unit: int = 512) -> float:
    """``G(t, sigma)``: theta-derivative of the response at ``t`` to input released at ``sigma``.

    The response is ``(1/2) t^(1/2-H) sigma^(1/2-H) l(t)* phi(t) phi^-1(sigma) b(sigma)``
    with ``phi`` the physical-clock propagator; it is integrated together
    with its theta-sensitivity from ``sigma`` to ``t``.
    """
    if not (0 < sigma <= t):
        raise DomainError("G(t, sigma) requires 0 < sigma <= t")
    if t == sigma:
        return 0.0
    y, d = _propagate(t, sigma, p, steps_per_unit)
    a = 0.5 - p.hurst
    return 0.5 * t**a * sigma**a * (t ** (2 * p.hurst - 1) * d[0] + d[1])


def response(t: float, sigma: float, p: SystemParams, steps_per_unit: int = 512) -> float:
    """The undifferentiated expression whose theta-derivative is ``G``."""
    if not (0 < sigma <= t):
        raise DomainError("response requires 0 < sigma <= t")
    y, _ = _propagate(t, sigma, p, steps_per_unit)
    if t == sigma:
        y = np.array([0.0, 0.0, 1.0, sigma ** (2 * p.hurst - 1)])
    a = 0.5 - p.hurst
    return 0.5 * t**a * sigma**a * (t ** (2 * p.hurst - 1) * y[0] + y[1])


def _propagate(t, sigma, p, steps_per_unit):
    sub = max(64, int(math.ceil((t - sigma) * steps_per_unit)))
    oy = np.zeros((1, 4))
    od = np.zeros((1, 4))
    _ode.propagate_source(float(sigma), np.array([float(t)]), sub, 2 * p.hurst - 1, p.theta,
                          p.damping, oy, od)
    return oy[0], od[0]


@dataclass(frozen=True, eq=False)
class OperatorDiscretization:
    """Nystrom discretization ``W^1/2 K W^1/2`` of the covariance kernel.

    Nodes are cell midpoints ``(j + 1/2) T/n`` with equal weights ``T/n``
    (the kernel is evaluated away from the singular origin).
    """

    horizon: float
    n: int
    nodes: np.ndarray
    weights: np.ndarray
    kernel_matrix: np.ndarray
    params: Optional[SystemParams] = None

    def eigenvalues(self) -> np.ndarray:
        """All eigenvalues in decreasing order (symmetric solver)."""
        return np.linalg.eigvalsh(self.kernel_matrix)[::-1]

    def quadratic_form(self, f) -> float:
        """``int int K(s, r) f(s) f(r) ds dr`` for a function ``f`` of time."""
        vals = np.asarray(f(self.nodes), dtype=float) * np.sqrt(self.weights)
        return float(vals @ self.kernel_matrix @ vals)


def build_KT(p: SystemParams, T: float, n: int, fine: int = 8) -> OperatorDiscretization:
    """Discretize ``K_T(s, r) = int_max(s,r)^T G(t, s) G(t, r) dt`` on ``n`` nodes.

    ``G`` is tabulated for every node on a fine grid with ``fine`` (even)
    subintervals per cell, and the time integral is a trapezoid sum on that
    grid, giving ``K = h G^T diag(w) G``.
    """
    n = int(n)
    if n < 16:
        raise DomainError("build_KT needs n >= 16")
    if n > MAX_NODES:
        raise DomainError(f"n={n} exceeds the memory guard of {MAX_NODES} nodes")
    if fine % 2:
        raise DomainError("fine must be even so that nodes fall on the fine grid")
    T = float(T)
    h = T / n
    nf = n * fine
    G = np.zeros((nf + 1, n))
    _ode.kernel_columns(T, n, fine, 2 * p.hurst - 1, p.theta, p.damping, p.hurst, G)
    wt = np.full(nf + 1, T / nf)
    wt[0] = wt[-1] = 0.5 * T / nf
    A = h * (G.T * wt) @ G
    A = 0.5 * (A + A.T)
    nodes = (np.arange(n) + 0.5) * h
    return OperatorDiscretization(T, n, nodes, np.full(n, h), A, p)


def top_eigenvalue(K: OperatorDiscretization, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Largest eigenvalue by power iteration on the (PSD) Nystrom matrix."""
    A = K.kernel_matrix
    x = np.ones(A.shape[0]) / math.sqrt(A.shape[0])
    y = A @ x
    lam = float(x @ y)
    if not np.any(y):
        return 0.0
    for _ in range(max_iter):
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        x = y / nrm
        y = A @ x
        new = float(x @ y)
        if abs(new - lam) <= tol * abs(new):
            return new
        lam = new
    raise NumericalError(f"power iteration did not converge in {max_iter} iterations")


def spectral_bound(p: SystemParams) -> float:
    """Upper bound for the top eigenvalue: the asymptotic optimal Fisher rate."""
    return asymptotic_rate(p)


# ---------------------------------------------------------------------------
# Upsilon


def upsilon_matrix(p: SystemParams, a: float) -> np.ndarray:
    th, k = p.theta, p.damping
    U = np.zeros((8, 8))
    U[0, 1] = -1.0
    U[1, 0], U[1, 1], U[1, 2] = th, k, 1.0
    U[2, 3] = -1.0
    U[3, 2], U[3, 3], U[3, 7] = th, k, -a
    U[4, 0], U[4, 5] = -2.0, -th
    U[5, 4], U[5, 5] = 1.0, -k
    U[6, 5], U[6, 7] = -1.0, -th
    U[7, 6], U[7, 7] = 1.0, -k
    return U


def upsilon_polynomial(p: SystemParams, a: float) -> np.ndarray:
    """Coefficients (highest first) of ``(y^2-ky+theta)^2 (y^2+ky+theta)^2 + 2a``."""
    th, k = p.theta, p.damping
    q1 = np.array([1.0, -k, th])
    q2 = np.array([1.0, k, th])
    c = np.polymul(np.polymul(q1, q1), np.polymul(q2, q2))
    c[-1] += 2.0 * a
    return c


@dataclass(frozen=True)
class UpsilonSpectrum:
    a: float
    roots: np.ndarray
    residuals: np.ndarray

    @property
    def root_sum(self) -> float:
        """Sum of the real parts of the four roots with the largest real part."""
        re = np.sort(self.roots.real)[::-1]
        return float(re[:4].sum())

    def real_count(self, tol: float = 1e-7) -> int:
        return int(np.count_nonzero(np.abs(self.roots.imag) <= tol * np.maximum(1.0, np.abs(self.roots))))

    def case(self) -> int:
        """Eigenvalue case read off the roots: 8 real -> 1, 4 real -> 2, otherwise 3."""
        r = self.real_count()
        return 1 if r == 8 else 2 if r == 4 else 3

    def repeated(self, tol: float = 1e-6) -> bool:
        r = self.roots
        d = np.abs(r[:, None] - r[None, :])
        np.fill_diagonal(d, np.inf)
        return bool(np.min(d) <= tol * max(1.0, np.max(np.abs(r))))


def upsilon_roots(p: SystemParams, a: float) -> UpsilonSpectrum:
    """Roots of the degree-8 polynomial via its companion matrix, with residuals."""
    c = upsilon_polynomial(p, a)
    roots = np.roots(c)
    res = np.abs(np.polyval(c, roots))
    return UpsilonSpectrum(float(a), roots, res)


# ---------------------------------------------------------------------------
# Psi system and the Laplace identity


@dataclass(frozen=True, eq=False)
class PsiPath:
    """Row-normalized ``[Psi1, Psi2]`` at grid nodes with accumulated log scales."""

    grid: TimeGrid
    rows: np.ndarray
    logscale: np.ndarray
    params: SystemParams
    a: float

    def slogdet(self, i: int = -1):
        s, ld = np.linalg.slogdet(self.rows[i][:, :8])
        return float(s), float(ld + self.logscale[i])

    def riccati(self, i: int) -> np.ndarray:
        """``H = Psi1^-1 Psi2`` (independent of the row normalization)."""
        r = self.rows[i]
        return np.linalg.solve(r[:, :8], r[:, 8:])


def solve_psi(p: SystemParams, a: float, grid: TimeGrid, steps_per_unit: float = DEFAULT_STEPS,
              renorm: int = 64) -> PsiPath:
    """Integrate the linear pair on the weight clock from ``Psi1 = Id``, ``Psi2 = 0``."""
    plan = weight_plan(grid, p.constants, steps_per_unit)
    n = grid.points.size
    rows = np.zeros((n, 8, 16))
    logscale = np.zeros(n)
    _ode.psi_path(*plan.powers(2.0 * p.hurst - 1.0), plan.h, plan.ends, p.lam, p.theta,
                  p.damping, float(a), int(renorm), rows, logscale)
    return PsiPath(grid, rows, logscale, p, float(a))


def slogdet_psi1(p: SystemParams, a: float, T: float, steps_per_unit: float = DEFAULT_STEPS):
    """``(sign, log|det Psi1(T)|)``, accumulated stably through row orthonormalization."""
    if T == 0:
        return 1.0, 0.0
    if T < 0:
        raise DomainError("T must be nonnegative")
    path = solve_psi(p, a, TimeGrid(np.array([0.0, float(T)])), steps_per_unit)
    return path.slogdet()


def det_psi1(p: SystemParams, a: float, T: float, steps_per_unit: float = DEFAULT_STEPS) -> float:
    """``det Psi1(T)``; computed in log form, so only the final exponential can overflow."""
    s, ld = slogdet_psi1(p, a, T, steps_per_unit)
    return s * math.exp(ld) if ld < 709.0 else s * math.inf


@dataclass
class LaplaceReport:
    a: float
    horizon: float
    n: int
    nu1: float
    lhs: float
    rhs: float
    log_lhs: float
    log_rhs: float
    residual: float

    def to_dict(self):
        return asdict(self)


def laplace_identity_check(p: SystemParams, a: float, T: float, n: int,
                           K: Optional[OperatorDiscretization] = None,
                           steps_per_unit: float = DEFAULT_STEPS) -> LaplaceReport:
    """Compare ``prod (1 + 2 a nu_i)`` over the full Nystrom spectrum with ``e^{-2kT} det Psi1(T)``."""
    K = build_KT(p, T, n) if K is None else K
    nu = K.eigenvalues()
    nu1 = float(nu[0])
    if nu1 > 0 and a <= -1.0 / (2.0 * nu1):
        raise DomainError(
            f"a={a:g} is outside the admissible window a > -1/(2 nu1) = {-1.0 / (2.0 * nu1):.6g} "
            f"(nu1 ~ {nu1:.6g})"
        )
    log_lhs = float(np.sum(np.log1p(2.0 * a * nu)))
    s, ld = slogdet_psi1(p, a, T, steps_per_unit)
    if s <= 0:
        raise NumericalError("det Psi1(T) is not positive; the Riccati factorization breaks down")
    log_rhs = ld - 2.0 * p.damping * T
    residual = abs(math.expm1(log_lhs - log_rhs))
    return LaplaceReport(float(a), float(T), int(K.n), nu1, math.exp(log_lhs), math.exp(log_rhs),
                         log_lhs, log_rhs, residual)


def hamiltonian_blocks(t: float, p: SystemParams, a: float):
    """``(cA, LtL, M)`` at time ``t`` in the weight clock."""
    q = t ** (2.0 * p.hurst - 1.0)
    B = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-p.theta, -p.damping, -1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -p.theta, -p.damping],
    ])
    A = np.array([[q, 1.0], [q * q, q]])
    cA = np.kron(B, p.lam * A)
    ell = np.array([q, 1.0, 0.0, 0.0])
    b = np.array([0.0, 0.0, 1.0, q])
    LtL = np.zeros((8, 8))
    LtL[:4, :4] = 2.0 * p.lam * np.outer(ell, ell)
    M = np.zeros((8, 8))
    M[4:, 4:] = np.outer(b, b)
    return cA, LtL, M


def riccati_consistency(p: SystemParams, a: float, T: float, checks: int = 8, delta: float = 1e-3,
                        steps_per_unit: float = DEFAULT_STEPS) -> float:
    """Relative residual of the Riccati equation for ``H = Psi1^-1 Psi2``.

    ``dH/dw = cA H + H cA^T + H LtL H - a lam M`` is checked at ``checks``
    interior times, with ``dH/dw`` from a five-point stencil of width
    ``delta`` in the weight clock.
    """
    c = p.constants
    th_T = float(c.w(T))
    centers = th_T * (np.arange(checks) + 1.0) / (checks + 1.0)
    offs = delta * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    thetas = (centers[:, None] + offs[None, :]).ravel()
    pts = np.concatenate([[0.0], c.w_inv(thetas)])
    path = solve_psi(p, a, TimeGrid(pts), steps_per_unit)
    weights = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * delta)
    worst = 0.0
    for j in range(checks):
        Hs = [path.riccati(1 + 5 * j + i) for i in range(5)]
        dH = sum(wt * Hi for wt, Hi in zip(weights, Hs))
        H0 = Hs[2]
        cA, LtL, M = hamiltonian_blocks(float(pts[1 + 5 * j + 2]), p, a)
        rhs = cA @ H0 + H0 @ cA.T + H0 @ LtL @ H0 - a * p.lam * M
        scale = max(np.abs(rhs).max(), np.abs(dH).max(), 1e-300)
        worst = max(worst, float(np.abs(dH - rhs).max() / scale))
    return worst
