"""Trajectory rollout, per-step Jacobians, Lyapunov-spectrum estimators and
the robustness metric.

Three estimators ship:

``svd_local``
    The literal parallel scheme: per step, singular values of the Gram
    matrix dPhi^T dPhi, logs averaged with the 1/2 prefactor that undoes the
    squaring.  Per-step work is independent, so it parallelizes over steps.
``qr_local``
    Same independent-per-step averaging but on QR of the raw Jacobian.
``qr_propagated``
    The Benettin recursion: an orthonormal frame is pushed through the
    Jacobian product with a QR re-factorization every step.  This is the
    estimator that converges to the true spectrum for non-commuting
    Jacobians; the local estimators measure mean *instantaneous* deformation
    instead, and the gap between the two is itself a reported quantity.

Determinism contract: per-step log terms are computed independently per step
(chunked across worker threads), then reduced by a single sequential
cumulative sum, so results are bitwise identical for any worker count.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import jets
from ._backend import kernels_for
from .decomp import SINGULAR_VALUE_FLOOR
from .errors import (
    ContractViolationError,
    ConvergenceError,
    SimulationBlowupError,
    UnsupportedEstimatorError,
)

ESTIMATORS = ("svd_local", "qr_local", "qr_propagated")
UNITS = ("per_second", "per_step")


@dataclass
class Trajectory:
    """States x_0..x_N produced by iterating the map, plus the context."""

    states: np.ndarray
    dt: float
    system_id: str
    theta: np.ndarray
    t0: float = 0.0

    @property
    def n_steps(self):
        return self.states.shape[0] - 1

    @property
    def final_state(self):
        return self.states[-1]

    def times(self):
        return self.t0 + self.dt * np.arange(self.states.shape[0])

    def verify(self, tmap):
        """Re-simulate and compare bitwise (the defining invariant)."""
        again = rollout(tmap, self.states[0], self.n_steps, theta=self.theta)
        return bool(np.array_equal(again.states, self.states))


@dataclass
class LyapunovSpectrum:
    """Estimated exponents (descending), their convergence trace and context.

    ``trace`` rows are running estimates after ``trace_steps[r]`` counted
    steps; the final row equals ``lam`` bitwise.  Units are 1/second when
    ``units == "per_second"`` (physical dt), 1/iteration otherwise.
    """

    lam: np.ndarray
    trace: np.ndarray
    trace_steps: np.ndarray
    estimator: str
    n_steps: int
    dt: float
    units: str = "per_second"
    burn_in: int = 0

    @property
    def L_lambda(self):
        return float(np.sum(self.lam))


@dataclass
class RobustnessMetric:
    """Signed sum of the exponents: log-rate of phase-space volume change."""

    L_lambda: float

    @property
    def regime(self):
        if self.L_lambda > 0.0:
            return "expanding"
        if self.L_lambda < 0.0:
            return "dissipative"
        return "volume-preserving"


@dataclass
class InvarianceResult:
    spectra: list
    spread: np.ndarray
    mean_lam: np.ndarray
    failures: list = field(default_factory=list)

    @property
    def max_spread(self):
        return float(np.max(self.spread)) if self.spread.size else float("nan")


def rollout(tmap, x0, n_steps, theta=None, t0=0.0):
    """Iterate the map ``n_steps`` times from ``x0``, storing every state."""
    if n_steps < 1:
        raise ContractViolationError("n_steps must be >= 1, got %r" % (n_steps,))
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (tmap.state_dim,):
        raise ContractViolationError(
            "x0 for %s must have shape (%d,), got %s" % (tmap.system_id, tmap.state_dim, x0.shape)
        )
    if not np.isfinite(x0).all():
        raise ContractViolationError("x0 contains non-finite entries: %r" % (x0,))
    theta = tmap.theta if theta is None else np.asarray(theta, dtype=float)
    if tmap.kernel_code is None:
        states, fail = _rollout_generic(tmap, x0, theta, int(n_steps), t0)
    else:
        kern = kernels_for(tmap.state_dim)
        states, fail = kern.rollout(
            tmap.kernel_code, x0, theta, int(n_steps), tmap.dt, tmap.state_dim
        )
    if fail >= 0:
        raise SimulationBlowupError(
            "%s rollout produced a non-finite or diverging state at step %d"
            % (tmap.system_id, fail),
            step_index=int(fail),
        )
    return Trajectory(states=states, dt=tmap.dt, system_id=tmap.system_id, theta=theta.copy(), t0=t0)


def _rollout_generic(tmap, x0, theta, n_steps, t0):
    """Fallback for maps without a kernel code (user-defined systems)."""
    states = np.empty((n_steps + 1, x0.shape[0]))
    states[0] = x0
    x = x0
    t = t0
    for i in range(n_steps):
        x = np.asarray(tmap.step_math(x, theta, t), dtype=float)
        if not np.all(np.isfinite(x)) or np.any(np.abs(x) > 1e12):
            return states, i
        states[i + 1] = x
        t += tmap.dt
    return states, -1


def trajectory_jacobians(tmap, traj):
    """Per-step Jacobians dPhi(x_i) for i = 0..N-1, via one batched jet pass."""
    states = traj.states[:-1]
    seeded = jets.seed_identity(states)
    out = tmap.step_math(seeded, traj.theta, traj.times()[:-1])
    return jets.extract_tangents(out)


def _chunk_ranges(n, n_threads):
    n_chunks = max(1, min(int(n_threads), n))
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(n_chunks) if bounds[i] < bounds[i + 1]]


def _per_step_logs(J, estimator, floor, n_threads):
    n, d_out, d_in = J.shape
    kern = kernels_for(max(d_out, d_in))
    if estimator == "qr_propagated":
        if d_out != d_in:
            raise UnsupportedEstimatorError(
                "qr_propagated needs square Jacobians (got %dx%d); use spectrum_svd_local, "
                "which handles non-square Jacobians through the Gram matrix" % (d_out, d_in)
            )
        return kern.qr_propagated_logs(J, floor)
    if estimator == "qr_local":
        if d_out != d_in:
            raise UnsupportedEstimatorError(
                "qr_local needs square Jacobians (got %dx%d); use spectrum_svd_local"
                % (d_out, d_in)
            )
        fn = kern.qr_local_logs
        width = d_in
    elif estimator == "svd_local":
        fn = kern.gram_svd_logs
        width = d_in
    else:
        raise ContractViolationError(
            "unknown estimator %r (choose from %s)" % (estimator, ", ".join(ESTIMATORS))
        )
    logs = np.empty((n, width))
    ranges = _chunk_ranges(n, n_threads)
    if len(ranges) == 1:
        fails = [fn(J, logs, 0, n, floor)]
    else:
        with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
            futs = [pool.submit(fn, J, logs, a, b, floor) for a, b in ranges]
            fails = [f.result() for f in futs]
    bad = [f for f in fails if f is not None and f >= 0]
    if bad:
        raise ConvergenceError(
            "per-step SVD failed to converge at step %d" % min(bad), residual=None
        )
    return logs


def _assemble_spectrum(logs, dt, estimator, burn_in, units, trace_stride):
    n_total = logs.shape[0]
    if not 0 <= burn_in < n_total:
        raise ContractViolationError(
            "burn_in must lie in [0, %d), got %r" % (n_total, burn_in)
        )
    if units not in UNITS:
        raise ContractViolationError("units must be one of %s" % (UNITS,))
    counted = logs[burn_in:]
    m = counted.shape[0]
    half = 2.0 if estimator == "svd_local" else 1.0
    unit_dt = dt if units == "per_second" else 1.0
    cum = np.cumsum(counted, axis=0)
    stride = max(1, int(trace_stride))
    idx = np.arange(stride - 1, m, stride)
    if idx.size == 0 or idx[-1] != m - 1:
        idx = np.append(idx, m - 1)
    denom = half * unit_dt * (idx + 1.0)
    rows = cum[idx] / denom[:, None]
    lam_unsorted = rows[-1]
    order = np.argsort(-lam_unsorted, kind="stable")
    return LyapunovSpectrum(
        lam=lam_unsorted[order],
        trace=rows[:, order],
        trace_steps=idx + 1,
        estimator=estimator,
        n_steps=m,
        dt=dt,
        units=units,
        burn_in=burn_in,
    )


def spectrum_from_jacobians(
    J,
    dt,
    estimator="qr_propagated",
    burn_in=0,
    floor=SINGULAR_VALUE_FLOOR,
    units="per_second",
    n_threads=1,
    trace_stride=1,
):
    """Estimate the spectrum from a raw (N, d_out, d_in) Jacobian stack."""
    J = np.ascontiguousarray(J, dtype=float)
    if J.ndim != 3:
        raise ContractViolationError("expected a (N, d_out, d_in) Jacobian stack")
    logs = _per_step_logs(J, estimator, floor, n_threads)
    return _assemble_spectrum(logs, dt, estimator, burn_in, units, trace_stride)


def _spectrum(traj, tmap, estimator, **kw):
    J = trajectory_jacobians(tmap, traj)
    return spectrum_from_jacobians(J, traj.dt, estimator=estimator, **kw)


def spectrum_svd_local(traj, tmap=None, **kw):
    """Per-step Gram-matrix SVD estimator (independent steps, parallel-safe)."""
    return _spectrum(traj, _require_map(traj, tmap), "svd_local", **kw)


def spectrum_qr_local(traj, tmap=None, **kw):
    """Per-step QR twin of the local SVD estimator."""
    return _spectrum(traj, _require_map(traj, tmap), "qr_local", **kw)


def spectrum_qr_propagated(traj, tmap=None, **kw):
    """Benettin propagated-QR estimator (converges to the true spectrum)."""
    return _spectrum(traj, _require_map(traj, tmap), "qr_propagated", **kw)


def _require_map(traj, tmap):
    if tmap is None:
        raise ContractViolationError("pass the transition map the trajectory was produced with")
    if tmap.system_id != traj.system_id:
        raise ContractViolationError(
            "trajectory was produced by %r, not %r" % (traj.system_id, tmap.system_id)
        )
    return tmap


def estimate_spectrum(tmap, x0, n_steps, estimator="qr_propagated", **kw):
    """Rollout + estimator in one call."""
    traj = rollout(tmap, x0, n_steps)
    return _spectrum(traj, tmap, estimator, **kw)


def robustness_metric(spec):
    """L = 1^T lambda: the signed sum of the exponents."""
    return RobustnessMetric(L_lambda=float(np.sum(spec.lam)))


def invariance_study(
    tmap,
    x0_samples,
    n_steps,
    estimator="qr_propagated",
    burn_in=0,
    units="per_second",
    n_threads=1,
    trace_stride=1,
    floor=SINGULAR_VALUE_FLOOR,
):
    """Run the estimator from many initial states; report per-sample spectra
    and the cross-sample dispersion of the exponents."""
    x0_samples = [np.asarray(x, dtype=float) for x in x0_samples]
    if not x0_samples:
        raise ContractViolationError("need at least one initial state")

    def run_one(x0):
        return estimate_spectrum(
            tmap,
            x0,
            n_steps,
            estimator=estimator,
            burn_in=burn_in,
            units=units,
            n_threads=1,
            trace_stride=trace_stride,
            floor=floor,
        )

    results = [None] * len(x0_samples)
    failures = []
    # The pool size is a scheduling knob only: per-sample results are
    # independent of it, so capping at the core count avoids the convoy
    # penalty of oversubscribed numpy threads without changing any bits.
    workers = max(1, min(int(n_threads), len(x0_samples), os.cpu_count() or 1))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {i: pool.submit(run_one, x0) for i, x0 in enumerate(x0_samples)}
            for i, fut in futs.items():
                try:
                    results[i] = fut.result()
                except SimulationBlowupError as exc:
                    failures.append((i, str(exc)))
    else:
        for i, x0 in enumerate(x0_samples):
            try:
                results[i] = run_one(x0)
            except SimulationBlowupError as exc:
                failures.append((i, str(exc)))
    spectra = [r for r in results if r is not None]
    if spectra:
        lams = np.stack([s.lam for s in spectra])
        spread = lams.max(axis=0) - lams.min(axis=0)
        mean_lam = lams.mean(axis=0)
    else:
        spread = np.array([])
        mean_lam = np.array([])
    return InvarianceResult(spectra=spectra, spread=spread, mean_lam=mean_lam, failures=failures)
