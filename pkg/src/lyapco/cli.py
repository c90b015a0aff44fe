"""Command-line entry point.

Subcommands: rollout, spectrum, invariance, sweep, optimize, validate.
``--config`` takes a JSON file path or a built-in preset name; ``--seed``,
``--threads``, ``--estimator`` and ``--out`` override the config.  Exit codes:
0 success, 2 config error, 3 simulation/optimization error, 4 validation
failure.
"""

import argparse
import itertools
import os
import sys
import time

import numpy as np

from . import validate as validate_mod
from ._backend import backend_name
from .config import PRESETS, ExperimentConfig, load_raw
from .errors import (
    ConfigError,
    ContractViolationError,
    ConvergenceError,
    LyapcoError,
    NumericalDomainError,
    OptimizationFailureError,
    SimulationBlowupError,
)
from .optimize import codesign
from .results import spectrum_record, write_record, write_table
from .spectrum import (
    ESTIMATORS,
    estimate_spectrum,
    invariance_study,
    robustness_metric,
    rollout,
    spectrum_from_jacobians,
    trajectory_jacobians,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_VALIDATION = 4


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="lyapco",
        description="Lyapunov-spectrum robustness analysis and co-design "
        "(kernel backend: %s)" % backend_name(),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("rollout", "simulate a trajectory and write it as CSV"),
        ("spectrum", "estimate the Lyapunov spectrum and robustness metric"),
        ("invariance", "estimate the spectrum from many seeded initial states"),
        ("sweep", "evaluate the robustness metric over a parameter grid"),
        ("optimize", "co-design parameters against the composite loss"),
        ("validate", "run the numerical self-check suite"),
    ):
        p = sub.add_parser(name, help=helptext)
        if name != "validate":
            p.add_argument("--config", required=True, help="JSON config path or preset name (%s)" % ", ".join(sorted(PRESETS)))
        p.add_argument("--out", default=None, help="output file path")
        p.add_argument("--seed", type=int, default=None, help="override the config RNG seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results are thread-count invariant)")
        p.add_argument("--estimator", choices=ESTIMATORS, default=None, help="override the config estimator")
    return parser


def _load(args):
    raw, preset = load_raw(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.estimator is not None:
        raw["estimator"] = args.estimator
    if args.out is not None:
        raw["out"] = args.out
    return ExperimentConfig(raw, preset=preset)


def _require(cfg, attr, what):
    value = getattr(cfg, attr)
    if value is None:
        raise ConfigError("this command needs config key %r" % what)
    return value


def _stride(cfg, n):
    if cfg.trace_stride is not None:
        return cfg.trace_stride
    return max(1, n // 1000)


def _out_path(cfg, default):
    return cfg.out if cfg.out else default


def cmd_rollout(cfg, threads):
    steps = _require(cfg, "steps", "steps")
    x0 = cfg.initial_states(n=1)[0]
    t0 = time.perf_counter()
    traj = rollout(cfg.tmap, x0, steps)
    wall = time.perf_counter() - t0
    stride = _stride(cfg, steps)
    path = _out_path(cfg, "lyapco-rollout.csv")
    header = ["step", "t"] + ["x%d" % i for i in range(cfg.tmap.state_dim)]
    rows = []
    idx = list(range(0, steps + 1, stride))
    if idx[-1] != steps:
        idx.append(steps)
    times = traj.times()
    for i in idx:
        rows.append([i, times[i]] + list(traj.states[i]))
    write_table(path, header, rows)
    print("system    : %s (%d steps, dt=%g)" % (cfg.system_id, steps, cfg.tmap.dt))
    print("final     : %s" % np.array2string(traj.final_state, precision=6))
    print("wrote %s (%d rows, %.2fs)" % (path, len(rows), wall))
    return EXIT_OK


def cmd_spectrum(cfg, threads):
    steps = _require(cfg, "steps", "steps")
    x0 = cfg.initial_states(n=1)[0]
    t0 = time.perf_counter()
    traj = rollout(cfg.tmap, x0, steps)
    J = trajectory_jacobians(cfg.tmap, traj)
    spec = spectrum_from_jacobians(
        J,
        traj.dt,
        estimator=cfg.estimator,
        burn_in=cfg.burn_in,
        units=cfg.units,
        n_threads=threads,
        trace_stride=_stride(cfg, steps - cfg.burn_in),
    )
    wall = time.perf_counter() - t0
    metric = robustness_metric(spec)
    path = _out_path(cfg, "lyapco-spectrum.json")
    write_record(path, spectrum_record(cfg, spec, traj=traj, wall_time=wall))
    print("lambda    : %s  (%s, %s)" % (np.array2string(spec.lam, precision=6), spec.estimator, spec.units))
    print("L_lambda  : %.6g  [%s]" % (metric.L_lambda, metric.regime))
    print("wrote %s (%.2fs)" % (path, wall))
    return EXIT_OK


def cmd_invariance(cfg, threads):
    steps = _require(cfg, "steps", "steps")
    x0s = cfg.initial_states()
    # coarser per-sample traces: the study is about cross-sample convergence
    stride = cfg.trace_stride if cfg.trace_stride is not None else max(1, (steps - cfg.burn_in) // 200)
    t0 = time.perf_counter()
    result = invariance_study(
        cfg.tmap,
        x0s,
        steps,
        estimator=cfg.estimator,
        burn_in=cfg.burn_in,
        units=cfg.units,
        n_threads=threads,
        trace_stride=stride,
    )
    wall = time.perf_counter() - t0
    path = _out_path(cfg, "lyapco-invariance.json")
    trace_steps = result.spectra[0].trace_steps if result.spectra else []
    record = {
        "version": "lyapco-invariance-v1",
        "config_digest": cfg.digest(),
        "preset": cfg.preset,
        "seed": cfg.seed,
        "estimator": cfg.estimator,
        "units": cfg.units,
        "samples": len(x0s),
        "lambdas": [[float("%.17g" % v) for v in s.lam] for s in result.spectra],
        "spread": [float("%.17g" % v) for v in result.spread],
        "max_spread": float("%.17g" % result.max_spread),
        "mean_lambda": [float("%.17g" % v) for v in result.mean_lam],
        "trace_steps": [int(s) for s in trace_steps],
        "traces": [[[float("%.17g" % v) for v in row] for row in s.trace] for s in result.spectra],
        "failures": [{"sample": i, "error": msg} for i, msg in result.failures],
        "wall_time_s": wall,
    }
    write_record(path, record)
    print("samples   : %d ok, %d failed" % (len(result.spectra), len(result.failures)))
    print("mean lam  : %s" % np.array2string(result.mean_lam, precision=6))
    print("spread    : %s (max %.3e)" % (np.array2string(result.spread, precision=3), result.max_spread))
    print("wrote %s (%.2fs)" % (path, wall))
    return EXIT_OK


def cmd_sweep(cfg, threads):
    steps = _require(cfg, "steps", "steps")
    grid = _require(cfg, "sweep_grid", "sweep.grid")
    x0 = cfg.initial_states(n=1)[0]
    names = list(grid.keys())
    combos = list(itertools.product(*(grid[n] for n in names)))
    indices = [cfg.tmap.param_index(n) for n in names]

    def run_point(combo):
        theta = cfg.tmap.theta.copy()
        for idx, val in zip(indices, combo):
            theta[idx] = val
        tm = cfg.tmap.with_theta(theta)
        try:
            spec = estimate_spectrum(
                tm,
                x0,
                steps,
                estimator=cfg.estimator,
                burn_in=cfg.burn_in,
                units=cfg.units,
                n_threads=1,
                trace_stride=max(1, steps),
            )
            return spec.lam, "ok"
        except (SimulationBlowupError, NumericalDomainError, ConvergenceError) as exc:
            return None, type(exc).__name__

    t0 = time.perf_counter()
    workers = max(1, min(threads, len(combos), os.cpu_count() or 1))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_point, combos))
    else:
        outcomes = [run_point(c) for c in combos]
    wall = time.perf_counter() - t0
    d = cfg.tmap.state_dim
    header = names + ["L_lambda"] + ["lambda_%d" % i for i in range(d)] + ["status"]
    rows = []
    for combo, (lam, status) in zip(combos, outcomes):
        if lam is None:
            rows.append(list(combo) + [float("nan")] * (d + 1) + [status])
        else:
            rows.append(list(combo) + [float(np.sum(lam))] + list(lam) + [status])
    path = _out_path(cfg, "lyapco-sweep.csv")
    write_table(path, header, rows)
    n_bad = sum(1 for _, s in outcomes if s != "ok")
    print("grid      : %s -> %d points (%d failed)" % (" x ".join(names), len(combos), n_bad))
    print("wrote %s (%.2fs)" % (path, wall))
    return EXIT_OK


def cmd_optimize(cfg, threads):
    loss = _require(cfg, "loss_spec", "loss")
    opt = _require(cfg, "optimizer", "optimizer")
    x0 = cfg.initial_states(n=1)[0]
    t0 = time.perf_counter()
    result = codesign(
        cfg.tmap,
        cfg.tmap.theta,
        x0,
        loss,
        iters=opt["iters"],
        grad_method=opt["grad_method"],
        lr=opt["lr"],
        beta1=opt["beta1"],
        beta2=opt["beta2"],
        eps=opt["eps"],
        lower=opt["lower"],
        upper=opt["upper"],
        fd_scale=opt["fd_scale"],
        normalize_steps=opt["normalize_steps"],
        n_threads=threads,
    )
    wall = time.perf_counter() - t0
    path = _out_path(cfg, "lyapco-optimize.json")
    hist_path = path + ".history.csv"
    header = ["iteration", "loss", "L_lambda"] + ["theta_%s" % n for n in cfg.tmap.param_names]
    rows = []
    for rec in result.history:
        ll = rec.L_lambda if rec.L_lambda is not None else float("nan")
        rows.append([rec.iteration, rec.loss, ll] + list(rec.theta))
    write_table(hist_path, header, rows)
    first, last = result.history[0], result.history[-1]
    record = {
        "version": "lyapco-optimize-v1",
        "config_digest": cfg.digest(),
        "preset": cfg.preset,
        "seed": cfg.seed,
        "iterations": len(result.history) - 1,
        "initial_loss": float("%.17g" % first.loss),
        "best_loss": float("%.17g" % result.best_loss),
        "initial_L_lambda": first.L_lambda,
        "final_L_lambda": last.L_lambda,
        "theta_names": list(cfg.tmap.param_names),
        "theta_best": [float("%.17g" % v) for v in result.theta],
        "history_file": hist_path,
        "wall_time_s": wall,
    }
    write_record(path, record)
    print("loss      : %.6g -> %.6g (best)" % (first.loss, result.best_loss))
    if first.L_lambda is not None and last.L_lambda is not None:
        print("L_lambda  : %.6g -> %.6g" % (first.L_lambda, last.L_lambda))
    print("wrote %s and %s (%.2fs)" % (path, hist_path, wall))
    return EXIT_OK


def cmd_validate(args):
    checks = validate_mod.run_all_checks()
    report = validate_mod.format_report(checks)
    print(report)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report + "\n")
    if any(not c.passed for c in checks):
        return EXIT_VALIDATION
    return EXIT_OK


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        cfg = _load(args)
        threads = max(1, args.threads)
        handler = {
            "rollout": cmd_rollout,
            "spectrum": cmd_spectrum,
            "invariance": cmd_invariance,
            "sweep": cmd_sweep,
            "optimize": cmd_optimize,
        }[args.command]
        return handler(cfg, threads)
    except (ConfigError, ContractViolationError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationBlowupError, NumericalDomainError, ConvergenceError, OptimizationFailureError) as exc:
        print("simulation error: %s" % exc, file=sys.stderr)
        return EXIT_SIMULATION
    except LyapcoError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
