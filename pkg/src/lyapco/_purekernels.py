"""Pure-numpy implementations of the hot kernels.

Selected at import time when the compiled extension is unavailable (or when
``LYAPCO_PURE=1`` forces it).  Same API and same algorithms as the compiled
module; the local estimators are vectorized across the step axis, so only the
sequential rollout and the propagated-QR recursion pay the interpreter tax.

Determinism notes: the batched Jacobi sweep applies each rotation under a
per-matrix mask, so a matrix's result depends only on its own entries --
chunking the step axis across worker threads cannot change any value.
"""

import numpy as np

from . import systems
from .decomp import _qr_square

COMPILED = False

_JACOBI_TOL = 1e-15
_JACOBI_MAX_SWEEPS = 30

_BLOWUP_LIMIT = 1e12


def rollout(kernel_code, x0, theta, n, dt, dim):
    """Iterate the map n times.  Returns (states, fail_index) with fail_index
    -1 on success, else the index of the first bad step."""
    x0 = np.asarray(x0, dtype=float)
    theta = np.asarray(theta, dtype=float)
    states = np.empty((n + 1, x0.shape[0]))
    states[0] = x0
    if kernel_code == 0:
        step = lambda x, t: systems._step_linear(x, theta, t, dt, dim)  # noqa: E731
    else:
        fn = systems.STEP_BY_CODE[kernel_code]
        step = lambda x, t: fn(x, theta, t, dt)  # noqa: E731
    x = x0
    t = 0.0
    for i in range(n):
        x = step(x, t)
        if not np.all(np.isfinite(x)) or np.any(np.abs(x) > _BLOWUP_LIMIT):
            return states, i
        states[i + 1] = x
        t += dt
    return states, -1


def qr_propagated_logs(J, floor):
    """Benettin recursion: propagate an orthonormal frame through the
    Jacobians, re-factorizing by QR each step; per-step log diag(R)."""
    J = np.asarray(J, dtype=float)
    n, d, _ = J.shape
    logs = np.empty((n, d))
    if d == 1:
        np.log(np.maximum(np.abs(J[:, 0, 0]), floor), out=logs[:, 0])
        return logs
    Q = np.eye(d)
    for i in range(n):
        Q, R = _qr_square(J[i] @ Q)
        logs[i] = np.log(np.maximum(np.diagonal(R), floor))
    return logs


def qr_local_logs(J, out, start, stop, floor):
    """Per-step QR of the raw Jacobian; logs of |R_jj| in column order.

    |R_jj| equals the norm of the j-th reduced column, so no Q or sign
    bookkeeping is needed.
    """
    B = np.array(J[start:stop], dtype=float)
    m, d, _ = B.shape
    for j in range(d):
        x = B[:, j:, j]
        norm = np.sqrt(np.einsum("mi,mi->m", x, x))
        out[start:stop, j] = np.log(np.maximum(norm, floor))
        if j == d - 1:
            break
        sign0 = np.where(x[:, 0] >= 0.0, 1.0, -1.0)
        v = x.copy()
        v[:, 0] += sign0 * norm
        vsq = np.einsum("mi,mi->m", v, v)
        scale = np.where(vsq > 0.0, 2.0 / np.where(vsq > 0.0, vsq, 1.0), 0.0)
        W = B[:, j:, j + 1 :]
        vtw = np.einsum("mi,mij->mj", v, W)
        W -= scale[:, None, None] * v[:, :, None] * vtw[:, None, :]
    return -1


def gram_svd_logs(J, out, start, stop, floor, max_sweeps=_JACOBI_MAX_SWEEPS):
    """Per-step singular values of the Gram matrix J^T J via one-sided Jacobi;
    logs sorted descending.  Returns -1 or the global index of the first
    matrix that missed the sweep budget."""
    Jc = np.asarray(J[start:stop], dtype=float)
    G = np.einsum("mki,mkj->mij", Jc, Jc)
    m, d, _ = G.shape
    if d == 1:
        out[start:stop, 0] = np.log(np.maximum(np.abs(G[:, 0, 0]), floor))
        return -1
    B = G
    for _ in range(max_sweeps):
        rotated_any = False
        for p in range(d - 1):
            for q in range(p + 1, d):
                bp = B[:, :, p]
                bq = B[:, :, q]
                alpha = np.einsum("mi,mi->m", bp, bp)
                beta = np.einsum("mi,mi->m", bq, bq)
                gamma = np.einsum("mi,mi->m", bp, bq)
                denom = np.sqrt(alpha * beta)
                mask = np.abs(gamma) > _JACOBI_TOL * denom
                if not mask.any():
                    continue
                rotated_any = True
                safe_gamma = np.where(mask, gamma, 1.0)
                tau = (beta - alpha) / (2.0 * safe_gamma)
                t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                t = np.where(tau == 0.0, 1.0, t)  # tau exactly 0 -> 45 degrees
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                c = np.where(mask, c, 1.0)
                s = np.where(mask, s, 0.0)
                bp_new = c[:, None] * bp - s[:, None] * bq
                bq_new = s[:, None] * bp + c[:, None] * bq
                B[:, :, p] = bp_new
                B[:, :, q] = bq_new
        if not rotated_any:
            break
    # convergence check
    fail = _first_unconverged(B)
    if fail >= 0:
        return start + fail
    sigma = np.sqrt(np.einsum("mij,mij->mj", B, B))
    sigma.sort(axis=1)
    out[start:stop] = np.log(np.maximum(sigma[:, ::-1], floor))
    return -1


def _first_unconverged(B):
    m, _, d = B.shape
    for p in range(d - 1):
        for q in range(p + 1, d):
            alpha = np.einsum("mi,mi->m", B[:, :, p], B[:, :, p])
            beta = np.einsum("mi,mi->m", B[:, :, q], B[:, :, q])
            gamma = np.einsum("mi,mi->m", B[:, :, p], B[:, :, q])
            denom = np.sqrt(alpha * beta)
            bad = np.abs(gamma) > _JACOBI_TOL * denom
            if bad.any():
                return int(np.argmax(bad))
    return -1
