"""Self-check suite behind the ``validate`` subcommand.

Each check computes a measured residual against an independent reference
(finite differences, closed forms, analytic spectra, exact determinant
identities) and reports measured-vs-tolerance.  The singular-value floor
check accepts an override so a deliberately broken floor shows up as a
failing line -- that negative control is exercised by the test suite.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import decomp, jets
from .spectrum import estimate_spectrum
from .systems import (
    HenonMap,
    Hopper1D,
    LinearMap,
    LogisticMap,
    Manipulator2R,
    VanDerPolMap,
)


@dataclass
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    note: str = ""


def _check(name, measured, tolerance, note=""):
    return CheckResult(name, float(measured), float(tolerance), bool(measured <= tolerance), note)


def _all_systems():
    return [
        LinearMap([[0.9, 0.2], [-0.1, 0.7]], dim=2),
        LogisticMap(),
        HenonMap(),
        VanDerPolMap(),
        Manipulator2R(),
        Hopper1D(),
    ]


def jet_vs_fd_checks(n_states=100, seed=1234):
    out = []
    for tmap in _all_systems():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_states):
            x = tmap.sample_state(rng)
            J = jets.jacobian_state(tmap, x).entries
            Jfd = jets.finite_diff_jacobian(
                lambda z, tm=tmap: np.asarray(tm.step_math(z, tm.theta, 0.0), dtype=float), x
            ).entries
            err = np.max(np.abs(J - Jfd)) / (1.0 + np.max(np.abs(Jfd)))
            worst = max(worst, float(err))
        out.append(_check("jet_vs_fd_%s" % tmap.system_id, worst, 1e-5, "%d states" % n_states))
    return out


def jet_chain_rule_check():
    worst = 0.0
    for tmap, x in (
        (VanDerPolMap(), np.array([1.3, -0.4])),
        (HenonMap(), np.array([0.2, 0.1])),
    ):
        J0 = jets.jacobian_state(tmap, x).entries
        x1 = tmap.step(x)
        J1 = jets.jacobian_state(tmap, x1).entries
        two = jets.seed_identity(x)
        two = tmap.step_math(tmap.step_math(two, tmap.theta, 0.0), tmap.theta, 0.0)
        J2 = jets.extract_tangents(two)
        err = np.max(np.abs(J2 - J1 @ J0)) / (1.0 + np.max(np.abs(J1 @ J0)))
        worst = max(worst, float(err))
    return _check("jet_chain_rule", worst, 1e-10, "two-step composition")


def _random_matrices(rng, count):
    mats = []
    for i in range(count):
        n = int(rng.integers(1, 9))
        A = rng.standard_normal((n, n))
        if i % 5 == 0 and n > 1:
            # graded spectrum up to condition number 1e8
            qa = np.linalg.qr(rng.standard_normal((n, n)))[0]
            qb = np.linalg.qr(rng.standard_normal((n, n)))[0]
            sv = np.logspace(0, -8, n)
            A = qa @ np.diag(sv) @ qb
        mats.append(A)
    return mats


def qr_residual_check(count=1000, seed=99):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for A in _random_matrices(rng, count):
        f = decomp.qr(A)
        n = A.shape[0]
        orth = np.max(np.abs(f.Q.T @ f.Q - np.eye(n)))
        recon = np.max(np.abs(f.Q @ f.R - A)) / (1.0 + np.max(np.abs(A)))
        tri = np.max(np.abs(np.tril(f.R, -1)))
        diag_ok = 0.0 if np.all(np.diagonal(f.R) >= 0.0) else 1.0
        worst = max(worst, float(orth), float(recon), float(tri), diag_ok)
    return _check("qr_residuals", worst, 1e-10, "%d matrices, sizes 1-8" % count)


def svd_residual_check(count=1000, seed=77):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for A in _random_matrices(rng, count):
        f = decomp.svd(A)
        m, n = A.shape
        k = min(m, n)
        recon = np.max(np.abs(f.U[:, :k] @ np.diag(f.S) @ f.V.T[:k] - A)) / (1.0 + np.max(np.abs(A)))
        orth_u = np.max(np.abs(f.U.T @ f.U - np.eye(m)))
        orth_v = np.max(np.abs(f.V.T @ f.V - np.eye(n)))
        sorted_ok = 0.0 if np.all(np.diff(f.S) <= 0.0) and np.all(f.S >= 0.0) else 1.0
        worst = max(worst, float(recon), float(orth_u), float(orth_v), sorted_ok)
    return _check("svd_residuals", worst, 1e-10, "%d matrices, sizes 1-8" % count)


def svd_2x2_oracle(a, b, c, d):
    """Closed-form singular values of [[a, b], [c, d]] (descending)."""
    q1 = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = math.sqrt(max(0.0, q1 * q1 - 4.0 * det * det))
    s1 = math.sqrt(max(0.0, (q1 + disc) / 2.0))
    s2 = 0.0 if s1 == 0.0 else abs(det) / s1
    return np.array([s1, s2])


def svd_2x2_check(count=200, seed=3):
    rng = np.random.default_rng(seed)
    worst = 0.0
    cases = [np.array([[0.0, 1.0], [-1e-10, 0.0]])]
    cases += [rng.standard_normal((2, 2)) for _ in range(count)]
    for A in cases:
        got = decomp.singular_values(A)
        want = svd_2x2_oracle(A[0, 0], A[0, 1], A[1, 0], A[1, 1])
        worst = max(worst, float(np.max(np.abs(got - want)) / (1.0 + want[0])))
    return _check("svd_2x2_closed_form", worst, 1e-13, "incl. sigma = 1e-10 case")


def sv_floor_check(floor=decomp.SINGULAR_VALUE_FLOOR):
    """A zero matrix must produce exactly log(floor) entries, never -inf."""
    if floor and floor > 0.0:
        logs = decomp.log_singular_values(np.zeros((2, 2)), floor=floor)
        measured = float(np.max(np.abs(logs - math.log(floor))))
        ok = math.isfinite(measured)
    else:
        # floor disabled: reproduce the raw computation to show what the
        # floor is protecting against
        with np.errstate(divide="ignore"):
            logs = np.log(decomp.singular_values(np.zeros((2, 2))))
        measured = math.inf
        ok = False
    return CheckResult("sv_floor_engaged", measured, 0.0, ok and measured == 0.0, "zero matrix")


def spectra_checks():
    out = []
    spec = estimate_spectrum(LogisticMap(), np.array([0.3]), 200_000, units="per_step")
    out.append(_check("logistic_ln2", abs(spec.lam[0] - math.log(2.0)), 5e-3, "N=2e5"))
    spec = estimate_spectrum(HenonMap(), np.array([0.1, 0.1]), 200_000)
    out.append(
        _check("henon_det_identity", abs(float(np.sum(spec.lam)) - math.log(0.3)), 1e-6, "sum vs ln b")
    )
    out.append(_check("henon_lambda1", abs(spec.lam[0] - 0.4192), 2e-2, "N=2e5"))
    spec = estimate_spectrum(VanDerPolMap(), np.array([2.0, 0.0]), 50_000, units="per_step")
    out.append(_check("vanderpol_neutral_exponent", abs(spec.lam[0]), 1e-3, "50 s horizon"))
    # constant Jacobian: exact at any horizon, so keep it inside the
    # divergence guard (2^35 < 1e12)
    tmap = LinearMap([[2.0, 0.0], [0.0, 0.5]], dim=2)
    spec = estimate_spectrum(tmap, np.array([1.0, 1.0]), 35)
    want = np.array([math.log(2.0), math.log(0.5)])
    out.append(_check("linear_exact_spectrum", float(np.max(np.abs(spec.lam - want))), 1e-12))
    sp_svd = estimate_spectrum(tmap, np.array([1.0, 1.0]), 35, estimator="svd_local")
    out.append(
        _check(
            "estimator_agreement_diagonal",
            float(np.max(np.abs(sp_svd.lam - spec.lam))),
            1e-12,
            "svd_local vs qr_propagated",
        )
    )
    return out


def run_all_checks(sv_floor=decomp.SINGULAR_VALUE_FLOOR, n_jacobian_states=100):
    checks = []
    checks.extend(jet_vs_fd_checks(n_states=n_jacobian_states))
    checks.append(jet_chain_rule_check())
    checks.append(qr_residual_check())
    checks.append(svd_residual_check())
    checks.append(svd_2x2_check())
    checks.append(sv_floor_check(floor=sv_floor))
    checks.extend(spectra_checks())
    return checks


def format_report(checks):
    lines = []
    width = max(len(c.name) for c in checks)
    for c in checks:
        lines.append(
            "%-7s %-*s measured=%-12.4e tolerance=%-10.3e %s"
            % ("PASS" if c.passed else "FAIL", width, c.name, c.measured, c.tolerance, c.note)
        )
    n_fail = sum(1 for c in checks if not c.passed)
    lines.append("%d checks, %d failed" % (len(checks), n_fail))
    return "\n".join(lines)
