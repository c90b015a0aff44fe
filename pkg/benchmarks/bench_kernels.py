#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Run from the repository root:

    python benchmarks/bench_kernels.py

Covers the three hot paths (fused rollout, per-step Gram SVD, propagated QR)
plus one end-to-end spectrum per benchmark system.  The fallback runs the
same algorithms, so the ratio is pure interpreter/vectorization overhead.
"""

import time

import numpy as np

from lyapco import _purekernels
from lyapco._backend import COMPILED_ACTIVE
from lyapco.spectrum import trajectory_jacobians
from lyapco.systems import HenonMap, Hopper1D, LogisticMap, Manipulator2R, VanDerPolMap

try:
    from lyapco import _kernels
except ImportError:
    _kernels = None


def timeit(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_rollouts(rows):
    cases = [
        (LogisticMap(), np.array([0.3]), 1_000_000),
        (HenonMap(), np.array([0.1, 0.1]), 1_000_000),
        (VanDerPolMap(), np.array([2.0, 0.0]), 100_000),
        (Manipulator2R(), np.zeros(4), 100_000),
        (Hopper1D(), Hopper1D().rest_state(), 100_000),
    ]
    for tmap, x0, n in cases:
        args = (tmap.kernel_code, x0, tmap.theta, n, tmap.dt, tmap.state_dim)
        t_pure = timeit(lambda: _purekernels.rollout(*args), repeats=1)
        t_comp = timeit(lambda: _kernels.rollout(*args)) if _kernels else float("nan")
        rows.append(("rollout %s (N=%.0e)" % (tmap.system_id, n), t_pure, t_comp))


def bench_accumulators(rows):
    rng = np.random.default_rng(0)
    for d, n in ((2, 200_000), (7, 20_000)):
        J = np.broadcast_to(np.eye(d), (n, d, d)) + 0.3 * rng.standard_normal((n, d, d))
        J = np.ascontiguousarray(J)
        out = np.empty((n, d))
        t_pure = timeit(lambda: _purekernels.gram_svd_logs(J, out, 0, n, 1e-300), repeats=1)
        t_comp = timeit(lambda: _kernels.gram_svd_logs(J, out, 0, n, 1e-300)) if _kernels else float("nan")
        rows.append(("gram_svd_logs d=%d (N=%.0e)" % (d, n), t_pure, t_comp))
        t_pure = timeit(lambda: _purekernels.qr_local_logs(J, out, 0, n, 1e-300), repeats=1)
        t_comp = timeit(lambda: _kernels.qr_local_logs(J, out, 0, n, 1e-300)) if _kernels else float("nan")
        rows.append(("qr_local_logs d=%d (N=%.0e)" % (d, n), t_pure, t_comp))
        t_pure = timeit(lambda: _purekernels.qr_propagated_logs(J, 1e-300), repeats=1)
        t_comp = timeit(lambda: _kernels.qr_propagated_logs(J, 1e-300)) if _kernels else float("nan")
        rows.append(("qr_propagated_logs d=%d (N=%.0e)" % (d, n), t_pure, t_comp))


def bench_end_to_end(rows):
    from lyapco.spectrum import Trajectory

    tmap = HenonMap()
    x0 = np.array([0.1, 0.1])

    def pipeline(kern):
        states, fail = kern.rollout(tmap.kernel_code, x0, tmap.theta, 500_000, 1.0, 2)
        assert fail == -1
        traj = Trajectory(states=states, dt=1.0, system_id=tmap.system_id, theta=tmap.theta)
        J = trajectory_jacobians(tmap, traj)
        logs = kern.qr_propagated_logs(J, 1e-300)
        return logs.sum(axis=0) / 500_000

    t_pure = timeit(lambda: pipeline(_purekernels), repeats=1)
    t_comp = timeit(lambda: pipeline(_kernels)) if _kernels else float("nan")
    rows.append(("henon spectrum end-to-end (N=5e5)", t_pure, t_comp))


def main():
    print("compiled backend importable: %s (active: %s)" % (_kernels is not None, COMPILED_ACTIVE))
    rows = []
    bench_rollouts(rows)
    bench_accumulators(rows)
    bench_end_to_end(rows)
    width = max(len(r[0]) for r in rows)
    print("%-*s %12s %12s %9s" % (width, "kernel", "pure [s]", "compiled [s]", "speedup"))
    for name, t_pure, t_comp in rows:
        ratio = t_pure / t_comp if t_comp == t_comp and t_comp > 0 else float("nan")
        print("%-*s %12.4f %12.4f %8.1fx" % (width, name, t_pure, t_comp, ratio))


if __name__ == "__main__":
    main()
