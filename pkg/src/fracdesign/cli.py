"""Command-line entry point.

Every subcommand prints one JSON document on stdout.  Exit status is 0 on
success, 2 for invalid input and 3 for numerical failures (including
Monte Carlo runs aborted for too many failed replications).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings

import numpy as np

from . import __version__
from .design import ControlSpec, control_energy, design_optimal_input, physical_control, realize_real_control
from .errors import DomainError, ExperimentAborted, FracDesignError, NumericalError
from .estimators import MLE, mle, two_stage_from_record
from .experiment import ExperimentConfig, run_experiment, simulate_record, with_overrides
from .fisher import ASYMPTOTIC, BROWNIAN, FRACTIONAL, asymptotic_fisher, fisher_brownian, fisher_fractional
from .fractional import TimeGrid, compute_constants, eval_wH
from .simulate import ObservationRecord
from .spectral import build_KT, laplace_identity_check, spectral_bound, top_eigenvalue
from .state import SystemParams

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x).__name__}")


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def emit(obj):
    print(json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default))


def _params(args) -> SystemParams:
    return SystemParams(args.theta, args.k, args.hurst)


def _add_system(sp, hurst=True):
    sp.add_argument("--theta", type=float, required=True)
    sp.add_argument("--k", type=float, required=True)
    if hurst:
        sp.add_argument("--hurst", type=float, default=0.5)


def _bracket(text):
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("bracket must be 'lo,hi'")
    return lo, hi


def cmd_constants(args):
    emit(compute_constants(args.hurst).to_dict())


def cmd_design(args):
    spec = design_optimal_input(_params(args))
    out = spec.to_dict()
    if args.T is not None:
        grid = TimeGrid.weight_clock(spec.constants, args.T, 64)
        out["energy"] = control_energy(realize_real_control(spec, grid), spec.constants)
    emit(out)


def cmd_simulate(args):
    cfg = ExperimentConfig.load(args.config)
    obs, pre = simulate_record(cfg, args.seed)
    obs.to_csv(args.out)
    out = {"path": args.out, "points": int(obs.grid.points.size), "seed": args.seed,
           "method": cfg.method, "params": cfg.params.to_dict()}
    if pre is not None:
        out.update(tau=pre.tau, rho=cfg.schedule[1], preliminary=pre.estimate)
    emit(out)


def _fisher_control(args, p, grid, physical):
    if args.input:
        with open(args.input) as fh:
            spec = ControlSpec.from_dict(json.load(fh))
    else:
        spec = design_optimal_input(p)
    if physical:
        return physical_control(spec, grid)
    return realize_real_control(spec, grid)


def cmd_fisher(args):
    p = _params(args)
    if args.mode == ASYMPTOTIC:
        rep = asymptotic_fisher(p, args.T)
    elif args.mode == BROWNIAN:
        p = SystemParams(args.theta, args.k, 0.5)
        grid = TimeGrid.uniform(args.T, max(16, int(math.ceil(args.T * 8))))
        rep = fisher_brownian(p, _fisher_control(args, p, grid, True), grid)
    else:
        c = p.constants
        grid = TimeGrid.weight_clock(c, args.T, max(16, int(math.ceil(eval_wH(args.T, c) * 8))))
        rep = fisher_fractional(p, _fisher_control(args, p, grid, False), grid)
    emit(rep.to_dict())


def cmd_estimate(args):
    params = None
    if args.theta is not None and args.k is not None:
        params = SystemParams(args.theta, args.k, args.hurst)
    obs = ObservationRecord.from_csv(args.input, params)
    method = args.method.replace("-", "_")
    if method == MLE:
        rep = mle(obs, obs.control, args.bracket)
    else:
        if args.tau is None or args.rho is None:
            raise DomainError("two-stage estimation needs --tau and --rho")
        rep = two_stage_from_record(obs, args.tau, args.rho, args.bracket)
    emit(rep.to_dict())


def cmd_montecarlo(args):
    cfg = ExperimentConfig.load(args.config)
    cfg = with_overrides(cfg, replications=args.replications, base_seed=args.seed, output_path=args.out)
    try:
        summary = run_experiment(cfg, workers=args.workers)
    except ExperimentAborted as exc:
        emit({"aborted": str(exc), "summary": None if exc.summary is None else exc.summary.to_dict(),
              "config_hash": cfg.config_hash()})
        return EXIT_NUMERICAL
    emit({"summary": summary.to_dict(), "config_hash": cfg.config_hash()})


def cmd_spectral(args):
    p = _params(args)
    K = build_KT(p, args.T, args.n)
    out = {"nu1": top_eigenvalue(K), "bound": spectral_bound(p), "a": args.a, "lhs": None,
           "rhs": None, "residual": None, "case": p.case}
    if args.a is not None:
        rep = laplace_identity_check(p, args.a, args.T, args.n, K=K)
        out.update(lhs=rep.lhs, rhs=rep.rhs, residual=rep.residual)
    emit(out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracdesign", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("constants", help="kernel constants for a Hurst index")
    sp.add_argument("--hurst", type=float, required=True)
    sp.set_defaults(func=cmd_constants)

    sp = sub.add_parser("design", help="optimal input family")
    _add_system(sp)
    sp.add_argument("--T", type=float, help="also report the realized energy on [0, T]")
    sp.set_defaults(func=cmd_design)

    sp = sub.add_parser("simulate", help="simulate one observation record")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fisher", help="Fisher information of an input")
    sp.add_argument("--mode", choices=(FRACTIONAL, BROWNIAN, ASYMPTOTIC), default=FRACTIONAL)
    _add_system(sp)
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--input", help="ControlSpec JSON (default: designed optimal input)")
    sp.set_defaults(func=cmd_fisher)

    sp = sub.add_parser("estimate", help="estimate theta from a record")
    sp.add_argument("--input", required=True)
    sp.add_argument("--method", choices=("mle", "two-stage", "two_stage"), default="mle")
    sp.add_argument("--bracket", type=_bracket, default=(0.2, 5.0))
    sp.add_argument("--tau", type=float)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--theta", type=float, help="override the sidecar parameters")
    sp.add_argument("--k", type=float)
    sp.add_argument("--hurst", type=float, default=0.5)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("montecarlo", help="run a Monte Carlo experiment")
    sp.add_argument("--config", required=True)
    sp.add_argument("--replications", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--workers", type=int)
    sp.set_defaults(func=cmd_montecarlo)

    sp = sub.add_parser("spectral", help="top eigenvalue and Laplace identity")
    _add_system(sp)
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--n", type=int, default=512)
    sp.add_argument("--a", type=float)
    sp.set_defaults(func=cmd_spectral)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            code = args.func(args)
    except (NumericalError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FracDesignError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
