"""Dense QR and SVD for the small matrices the estimators chew through.

Householder QR with a nonnegative-diagonal convention (sign flips absorbed
into Q, so the log of a diagonal entry never needs an absolute value), and a
one-sided Jacobi SVD.  Jacobi is slower than bidiagonalization but keeps full
relative accuracy on tiny singular values, which matters because the spectrum
accumulators sum logarithms: a singular value that is wrong in its leading
digits near the floor poisons the whole average.

Everything here is deterministic: fixed sweep order, no pivoting, and a fixed
tie-breaking rule for the SVD sign convention.
"""

import numpy as np

from .errors import ContractViolationError, ConvergenceError, NumericalDomainError

#: Smallest singular value allowed into a logarithm.  Chosen so that an exact
#: zero (a fully dissipative step) contributes a huge negative but finite term
#: instead of -inf.
SINGULAR_VALUE_FLOOR = 1e-300

_JACOBI_TOL = 1e-15
_JACOBI_MAX_SWEEPS = 30


class QRFactors:
    __slots__ = ("Q", "R")

    def __init__(self, Q, R):
        self.Q = Q
        self.R = R


class SVDFactors:
    """Full SVD ``A = U @ diag_pad(S) @ V.T`` with S sorted descending."""

    __slots__ = ("U", "S", "V")

    def __init__(self, U, S, V):
        self.U = U
        self.S = S
        self.V = V


def _require_finite(A, what):
    if not np.isfinite(A).all():
        idx = tuple(int(i) for i in np.argwhere(~np.isfinite(A))[0])
        raise NumericalDomainError("%s has non-finite entry at %s" % (what, idx))


def qr(A):
    """Householder QR of a square matrix with R's diagonal made nonnegative."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractViolationError("qr expects a square matrix, got shape %s" % (A.shape,))
    _require_finite(A, "qr input")
    Q, R = _qr_square(A)
    return QRFactors(Q, R)


def _qr_square(A):
    """Unchecked Householder QR on a square matrix; returns fresh arrays."""
    d = A.shape[0]
    R = A.astype(float, copy=True)
    Q = np.eye(d)
    for j in range(d - 1):
        x = R[j:, j]
        norm = np.sqrt(np.dot(x, x))
        if norm == 0.0:
            continue
        v = x.copy()
        v[0] += norm if x[0] >= 0.0 else -norm
        vsq = np.dot(v, v)
        if vsq == 0.0:
            continue
        # Apply H = I - 2 v v^T / (v^T v) from the left to R and to Q^T rows.
        R[j:, j:] -= np.outer(v, (2.0 / vsq) * (v @ R[j:, j:]))
        Q[:, j:] -= np.outer(Q[:, j:] @ v, (2.0 / vsq) * v)
        R[j + 1 :, j] = 0.0  # the reflector annihilates these exactly by design
    # Sign convention: flip rows of R (and matching columns of Q) so that the
    # diagonal is nonnegative and log(R_jj) needs no absolute value.
    for j in range(d):
        if R[j, j] < 0.0:
            R[j, j:] = -R[j, j:]
            Q[:, j] = -Q[:, j]
    return Q, R


def svd(A):
    """One-sided Jacobi SVD of a real matrix, possibly non-square.

    Singular values come back sorted descending; the sign convention makes
    the largest-magnitude entry of each left singular vector positive (first
    index wins ties), which pins the factors uniquely for reproducibility.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ContractViolationError("svd expects a matrix, got shape %s" % (A.shape,))
    _require_finite(A, "svd input")
    m, n = A.shape
    if m >= n:
        U, S, V = _svd_tall(A)
    else:
        Vt, S, Ut = _svd_tall(A.T)
        U, V = Ut, Vt
    _apply_sign_convention(U, V, min(m, n))
    return SVDFactors(U, S, V)


def _svd_tall(A):
    """SVD of an m x n matrix with m >= n via one-sided Jacobi on columns."""
    m, n = A.shape
    B = A.astype(float, copy=True)
    V = np.eye(n)
    if n > 1:
        converged = False
        off = 0.0
        for _ in range(_JACOBI_MAX_SWEEPS):
            off = 0.0
            for p in range(n - 1):
                for q in range(p + 1, n):
                    alpha = np.dot(B[:, p], B[:, p])
                    beta = np.dot(B[:, q], B[:, q])
                    gamma = np.dot(B[:, p], B[:, q])
                    denom = np.sqrt(alpha * beta)
                    if denom == 0.0 or abs(gamma) <= _JACOBI_TOL * denom:
                        continue
                    off = max(off, abs(gamma) / denom)
                    c, s = _jacobi_rotation(alpha, beta, gamma)
                    bp = B[:, p].copy()
                    B[:, p] = c * bp - s * B[:, q]
                    B[:, q] = s * bp + c * B[:, q]
                    vp = V[:, p].copy()
                    V[:, p] = c * vp - s * V[:, q]
                    V[:, q] = s * vp + c * V[:, q]
            if off == 0.0:
                converged = True
                break
        if not converged:
            raise ConvergenceError(
                "one-sided Jacobi SVD did not converge in %d sweeps "
                "(worst off-diagonal ratio %.3e)" % (_JACOBI_MAX_SWEEPS, off),
                residual=off,
            )
    sigma = np.sqrt(np.einsum("ij,ij->j", B, B))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    B = B[:, order]
    V = V[:, order]
    U = np.zeros((m, m))
    filled = 0
    for j in range(n):
        if sigma[j] > 0.0:
            U[:, j] = B[:, j] / sigma[j]
            filled = j + 1
    _complete_basis(U, filled)
    return U, sigma, V


def _jacobi_rotation(alpha, beta, gamma):
    """Rotation (c, s) zeroing the Gram off-diagonal of a column pair."""
    tau = (beta - alpha) / (2.0 * gamma)
    if tau >= 0.0:
        t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
    else:
        t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
    c = 1.0 / np.sqrt(1.0 + t * t)
    return c, t * c


def _complete_basis(U, filled):
    """Fill remaining columns of U with a deterministic orthonormal complement."""
    m = U.shape[0]
    col = filled
    cand = 0
    while col < m and cand < m:
        v = np.zeros(m)
        v[cand] = 1.0
        v -= U[:, :col] @ (U[:, :col].T @ v)
        norm = np.sqrt(np.dot(v, v))
        if norm > 0.5:
            U[:, col] = v / norm
            col += 1
        cand += 1
    # A second pass with re-orthogonalization would only matter for m >> 8;
    # guard anyway so a silent rank bug cannot slip through.
    if col < m:
        raise ConvergenceError("failed to complete the left singular basis", residual=None)


def _apply_sign_convention(U, V, rank_cols):
    for j in range(U.shape[1]):
        i = int(np.argmax(np.abs(U[:, j])))
        if U[i, j] < 0.0:
            U[:, j] = -U[:, j]
            if j < rank_cols:
                V[:, j] = -V[:, j]
    for j in range(rank_cols, V.shape[1]):
        i = int(np.argmax(np.abs(V[:, j])))
        if V[i, j] < 0.0:
            V[:, j] = -V[:, j]


def singular_values(A):
    """Singular values only (descending); cheaper than the full factors."""
    return svd(A).S


def log_singular_values(A, floor=SINGULAR_VALUE_FLOOR):
    """log(max(sigma_j, floor)) for each singular value, descending.

    The floor keeps a single exactly-singular step from collapsing a long
    logarithm sum to -inf.
    """
    if not floor > 0.0:
        raise ContractViolationError("floor must be positive, got %r" % (floor,))
    return np.log(np.maximum(singular_values(A), floor))
