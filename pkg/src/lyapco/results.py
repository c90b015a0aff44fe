"""Result files: JSON records for single runs, CSV tables for sweeps and
optimization histories.

Floats print with 17 significant digits, which round-trips IEEE doubles
exactly, so re-running a config and diffing files (minus wall time) is a
meaningful bitwise check.
"""

import json

import numpy as np

from .errors import ConfigError

RESULT_VERSION = "lyapco-result-v1"

_REQUIRED_RESULT_KEYS = {
    "version",
    "config_digest",
    "seed",
    "estimator",
    "units",
    "n_steps",
    "dt",
    "lambda",
    "L_lambda",
    "trace_steps",
    "trace",
    "trajectory_summary",
    "loss_diagnostics",
    "wall_time_s",
}


def _f(x):
    """17-significant-digit rendering; round-trips float64 exactly."""
    return float("%.17g" % float(x))


def _flist(arr):
    return [_f(v) for v in np.asarray(arr, dtype=float).reshape(-1)]


def spectrum_record(cfg, spec, traj=None, diagnostics=None, wall_time=0.0, extra=None):
    rec = {
        "version": RESULT_VERSION,
        "config_digest": cfg.digest(),
        "preset": cfg.preset,
        "seed": cfg.seed,
        "estimator": spec.estimator,
        "units": spec.units,
        "n_steps": int(spec.n_steps),
        "burn_in": int(spec.burn_in),
        "dt": _f(spec.dt),
        "lambda": _flist(spec.lam),
        "L_lambda": _f(np.sum(spec.lam)),
        "trace_steps": [int(s) for s in spec.trace_steps],
        "trace": [_flist(row) for row in spec.trace],
        "trajectory_summary": _traj_summary(traj),
        "loss_diagnostics": diagnostics,
        "wall_time_s": wall_time,
    }
    if extra:
        rec.update(extra)
    return rec


def _traj_summary(traj):
    if traj is None:
        return None
    states = traj.states
    return {
        "final_state": _flist(states[-1]),
        "min": _flist(states.min(axis=0)),
        "max": _flist(states.max(axis=0)),
    }


def write_record(path, record):
    with open(path, "w") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_record(path):
    with open(path) as fh:
        record = json.load(fh)
    validate_record(record)
    return record


def validate_record(record):
    if not isinstance(record, dict):
        raise ConfigError("result record must be an object")
    missing = _REQUIRED_RESULT_KEYS - set(record)
    if missing:
        raise ConfigError("result record is missing key %r" % sorted(missing)[0])
    if record["version"] != RESULT_VERSION:
        raise ConfigError("unsupported result version %r" % record["version"])
    return record


def strip_volatile(record):
    """Drop fields legitimately allowed to differ between reruns."""
    out = dict(record)
    out.pop("wall_time_s", None)
    return out


def write_table(path, header, rows):
    """CSV with a fixed header; floats at 17 significant digits."""
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for cell in row:
                if isinstance(cell, str):
                    cells.append(cell)
                elif isinstance(cell, (int, np.integer)):
                    cells.append(str(int(cell)))
                else:
                    cells.append("%.17g" % float(cell))
            fh.write(",".join(cells) + "\n")


def read_table(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    return header, rows
