"""Monte Carlo driver: configuration, seed derivation, replications and summaries."""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from statsmodels.stats.diagnostic import normal_ad

from ._ode import max_workers
from .design import design_optimal_input, realize_real_control
from .errors import BoundaryWarning, DomainError, ExperimentAborted, FracDesignError, RegimeWarning
from .estimators import (
    MLE,
    TWO_STAGE,
    amplified_power_law,
    mle,
    newton_two_stage,
    preliminary_estimate,
    stitched_control,
    tau_rho,
)
from .fractional import TimeGrid, eval_wH
from .simulate import simulate_martingale_increments, simulate_observation
from .state import SystemParams

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
FAILURE_LIMIT = 0.10
POINTS_PER_UNIT = 64
CSV_COLUMNS = ("replication", "seed", "estimate", "standardized_error", "remainder", "wall_ms", "failure")
METHODS = (MLE, TWO_STAGE)


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (the state is advanced by the caller)."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def replication_seed(base_seed: int, index: int) -> int:
    """Seed of replication ``index``: the ``index+1``-th SplitMix64 draw from ``base_seed``."""
    if base_seed < 0 or index < 0:
        raise DomainError("seeds and replication indices are unsigned")
    return splitmix64((base_seed + (index + 1) * GOLDEN_GAMMA) & MASK64)


@dataclass(frozen=True)
class ExperimentConfig:
    params: SystemParams
    horizon: float
    steps: int = 0
    replications: int = 200
    base_seed: int = 0
    method: str = MLE
    tau_epsilon: float = 0.05
    bracket: tuple = (0.2, 5.0)
    output_path: str = ""
    rho: Optional[float] = None
    noise: bool = True
    record_timing: bool = False
    workers: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise DomainError("replications must be at least 1")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        if self.steps < 0:
            raise DomainError("steps must be nonnegative (0 selects the default grid)")
        if self.base_seed < 0 or self.base_seed > MASK64:
            raise DomainError("base_seed must be an unsigned 64-bit integer")
        if self.method not in METHODS:
            raise DomainError(f"method must be one of {METHODS}")
        if not 0 < self.tau_epsilon < 1.0 / 9.0:
            raise DomainError("tau_epsilon must lie in (0, 1/9)")
        lo, hi = self.bracket
        if not 0 < lo < hi < math.inf:
            raise DomainError("bracket must satisfy 0 < lo < hi < inf")
        if self.rho is not None and not self.rho > 0:
            raise DomainError("rho must be positive")

    @property
    def grid_steps(self) -> int:
        if self.steps:
            return int(self.steps)
        return int(math.ceil(eval_wH(self.horizon, self.params.constants) * POINTS_PER_UNIT))

    @property
    def schedule(self):
        tau, rho = tau_rho(self.horizon, self.tau_epsilon)
        return tau, (rho if self.rho is None else float(self.rho))

    def serialize(self) -> str:
        """Canonical INI text (fixed section and key order, ``repr`` floats)."""
        p = self.params
        cp = configparser.ConfigParser(interpolation=None)
        cp["system"] = {"theta": repr(float(p.theta)), "k": repr(float(p.damping)), "hurst": repr(float(p.hurst))}
        cp["experiment"] = {
            "horizon": repr(float(self.horizon)),
            "steps": str(int(self.steps)),
            "replications": str(int(self.replications)),
            "base_seed": str(int(self.base_seed)),
            "method": self.method,
            "tau_epsilon": repr(float(self.tau_epsilon)),
            "bracket": f"{float(self.bracket[0])!r}, {float(self.bracket[1])!r}",
            "rho": "" if self.rho is None else repr(float(self.rho)),
            "noise": str(bool(self.noise)).lower(),
            "record_timing": str(bool(self.record_timing)).lower(),
            "workers": str(int(self.workers)),
        }
        cp["output"] = {"path": self.output_path}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
            s, e = cp["system"], cp["experiment"]
            params = SystemParams(float(s["theta"]), float(s["k"]), float(s.get("hurst", "0.5")))
            lo, hi = (float(x) for x in e.get("bracket", "0.2, 5.0").split(","))
            rho = e.get("rho", "").strip()
            return cls(
                params=params,
                horizon=float(e["horizon"]),
                steps=int(e.get("steps", "0")),
                replications=int(e.get("replications", "200")),
                base_seed=int(e.get("base_seed", "0")),
                method=e.get("method", MLE).replace("-", "_"),
                tau_epsilon=float(e.get("tau_epsilon", "0.05")),
                bracket=(lo, hi),
                output_path=cp.get("output", "path", fallback=""),
                rho=float(rho) if rho else None,
                noise=e.getboolean("noise", True),
                record_timing=e.getboolean("record_timing", False),
                workers=int(e.get("workers", "0")),
            )
        except (KeyError, ValueError, configparser.Error) as exc:
            if isinstance(exc, FracDesignError):
                raise
            raise DomainError(f"invalid experiment config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.parse(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.serialize())

    def config_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()

    def to_dict(self):
        d = asdict(self)
        d["params"] = self.params.to_dict()
        return d


@dataclass
class MonteCarloSummary:
    n: int
    mean_bias: float
    var_standardized: float
    normality_p: float
    fisher_rate: float
    wall_time: float
    failures: int = 0
    mean_standardized: float = math.nan
    median_abs_remainder: float = math.nan
    median_abs_leading: float = math.nan

    def to_dict(self):
        return asdict(self)


def _nanmedian_abs(x):
    x = np.abs(np.asarray([v for v in x if v is not None], dtype=float))
    return float(np.median(x)) if x.size else math.nan


def summarize(rows, theta_true: Optional[float] = None, horizon: Optional[float] = None,
              wall_time: float = 0.0, failures: int = 0, minimum: int = 2) -> MonteCarloSummary:
    """Aggregate successful replication rows.

    ``rows`` are mappings with ``estimate`` and ``standardized_error`` and
    optionally ``remainder`` and ``fisher_used``.  The normality p-value is
    Anderson-Darling with estimated mean and variance; a constant column
    gives variance 0 and p-value 0.  The leading term is
    ``standardized_error - remainder``.
    """
    rows = [r for r in rows if not r.get("failure")]
    if len(rows) < minimum:
        raise DomainError(f"summarize needs at least {minimum} successful rows, got {len(rows)}")
    est = np.array([float(r["estimate"]) for r in rows])
    std = np.array([float(r["standardized_error"]) for r in rows])
    bias = float(est.mean() - theta_true) if theta_true is not None else math.nan
    var = float(std.var(ddof=1)) if std.size > 1 else 0.0
    if std.size < 3 or var <= 1e-300 * max(1.0, float(np.abs(std).max())):
        p = 0.0
    else:
        p = float(np.clip(normal_ad(std)[1], 0.0, 1.0))
    fisher = [r.get("fisher_used") for r in rows if r.get("fisher_used") is not None]
    rate = float(np.mean(fisher)) / horizon if fisher and horizon else math.nan
    rem = [r.get("remainder") for r in rows]
    lead = [s - r["remainder"] for s, r in zip(std, rows) if r.get("remainder") is not None]
    return MonteCarloSummary(
        n=len(rows),
        mean_bias=bias,
        var_standardized=var,
        normality_p=p,
        fisher_rate=rate,
        wall_time=float(wall_time),
        failures=int(failures),
        mean_standardized=float(std.mean()),
        median_abs_remainder=_nanmedian_abs(rem),
        median_abs_leading=_nanmedian_abs(lead),
    )


def experiment_grid(cfg: ExperimentConfig) -> TimeGrid:
    """Weight-clock grid with ``grid_steps`` intervals; two-stage runs also get ``tau`` as a node."""
    c = cfg.params.constants
    n = cfg.grid_steps
    if cfg.method == TWO_STAGE:
        tau, _ = cfg.schedule
        return TimeGrid.weight_clock_nodes(c, [tau, cfg.horizon], eval_wH(cfg.horizon, c) / n)
    return TimeGrid.weight_clock(c, cfg.horizon, n)


def simulate_record(cfg: ExperimentConfig, seed: int, grid: Optional[TimeGrid] = None):
    """Simulate one observation record under the configured design.

    Returns ``(record, preliminary)``; ``preliminary`` is the first-stage
    report for two-stage runs (the second-stage input depends on it) and
    ``None`` otherwise.
    """
    grid = experiment_grid(cfg) if grid is None else grid
    p = cfg.params
    if cfg.method == MLE:
        v = realize_real_control(design_optimal_input(p), grid)
        return simulate_observation(p, v, grid, seed, noise=cfg.noise), None
    tau, rho = cfg.schedule
    inc = simulate_martingale_increments(p.constants, grid, seed)
    if not cfg.noise:
        inc = np.zeros_like(inc)
    i0 = int(np.searchsorted(grid.points, tau))
    short = grid.restrict(grid.points[i0])
    v1 = realize_real_control(amplified_power_law(p, rho), short)
    obs1 = simulate_observation(p, v1, short, seed, increments=inc[:i0])
    pre = preliminary_estimate(obs1, rho, cfg.bracket, v=v1)
    v = stitched_control(p, grid, grid.points[i0], rho, pre.estimate)
    return simulate_observation(p, v, grid, seed, increments=inc), pre


def run_replication(cfg: ExperimentConfig, index: int, grid: Optional[TimeGrid] = None) -> dict:
    """One replication; module errors become a ``failure`` entry instead of propagating."""
    seed = replication_seed(cfg.base_seed, index)
    grid = experiment_grid(cfg) if grid is None else grid
    p = cfg.params
    row = {"replication": index, "seed": seed, "estimate": None, "standardized_error": None,
           "remainder": None, "wall_ms": None, "failure": "", "fisher_used": None}
    start = time.perf_counter()
    try:
        obs, pre = simulate_record(cfg, seed, grid)
        if cfg.method == MLE:
            rep = mle(obs, obs.control, cfg.bracket, theta_true=p.theta)
        else:
            rep = newton_two_stage(obs, pre.tau, pre.estimate, obs.control, theta_true=p.theta)
        row.update(estimate=rep.estimate, standardized_error=rep.standardized_error,
                   remainder=rep.remainder, fisher_used=rep.fisher_used)
    except (FracDesignError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        row["failure"] = f"{type(exc).__name__}: {exc}"
    row["wall_ms"] = 1e3 * (time.perf_counter() - start)
    return row


def _fmt(x):
    return "" if x is None else repr(float(x))


def write_rows(rows, path, record_timing: bool = False):
    """Per-replication CSV; ``wall_ms`` stays empty unless timing is recorded."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([
                r["replication"], r["seed"], _fmt(r["estimate"]), _fmt(r["standardized_error"]),
                _fmt(r["remainder"]), _fmt(r["wall_ms"]) if record_timing else "", r["failure"],
            ])


def summary_path(output_path) -> Path:
    p = Path(output_path)
    return p.with_name(p.stem + ".summary.json")


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> MonteCarloSummary:
    """Run all replications, write the CSV and JSON summary, and return the summary.

    Replications run on a thread pool (the integrators release the GIL);
    results are ordered by replication index, so output does not depend on
    the worker count.  More than 10% failed replications raise
    :class:`ExperimentAborted` after the outputs are written.
    """
    start = time.perf_counter()
    grid = experiment_grid(cfg)
    n_workers = workers or cfg.workers or max_workers()
    n_workers = max(1, min(int(n_workers), cfg.replications))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        warnings.simplefilter("ignore", RegimeWarning)
        if n_workers == 1:
            rows = [run_replication(cfg, i, grid) for i in range(cfg.replications)]
        else:
            with ThreadPoolExecutor(n_workers) as pool:
                rows = list(pool.map(lambda i: run_replication(cfg, i, grid), range(cfg.replications)))
    wall = time.perf_counter() - start
    failures = sum(1 for r in rows if r["failure"])
    ok = cfg.replications - failures
    summary = None
    if ok >= 1:
        summary = summarize(rows, cfg.params.theta, cfg.horizon, wall, failures, minimum=1)
    if cfg.output_path:
        write_rows(rows, cfg.output_path, cfg.record_timing)
        doc = {
            "config": cfg.to_dict(),
            "config_hash": cfg.config_hash(),
            "grid_intervals": grid.n,
            "summary": None if summary is None else summary.to_dict(),
        }
        with open(summary_path(cfg.output_path), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
    if failures > FAILURE_LIMIT * cfg.replications:
        reasons = sorted({r["failure"].split(":")[0] for r in rows if r["failure"]})
        raise ExperimentAborted(
            f"{failures} of {cfg.replications} replications failed ({', '.join(reasons)})",
            summary=summary,
            rows=rows,
        )
    return summary


def _json_default(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x))


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
