"""Householder QR and one-sided Jacobi SVD against closed forms and residuals."""

import math

import numpy as np
import pytest

from lyapco import decomp
from lyapco.errors import ContractViolationError, NumericalDomainError


def randmat(rng, n, cond=None):
    if cond is None:
        return rng.standard_normal((n, n))
    if n == 1:
        return np.array([[1.0]])
    qa = np.linalg.qr(rng.standard_normal((n, n)))[0]
    qb = np.linalg.qr(rng.standard_normal((n, n)))[0]
    sv = np.logspace(0, -math.log10(cond), n)
    return qa @ np.diag(sv) @ qb


# -- QR ------------------------------------------------------------------------


def test_qr_identity():
    f = decomp.qr(np.eye(3))
    assert np.array_equal(f.Q, np.eye(3))
    assert np.array_equal(f.R, np.eye(3))


def test_qr_sign_convention_diag():
    f = decomp.qr(np.diag([3.0, -2.0]))
    assert np.allclose(f.R, np.diag([3.0, 2.0]), atol=0.0)
    assert np.allclose(f.Q, np.diag([1.0, -1.0]), atol=0.0)


def test_qr_ill_conditioned_residuals(rng):
    A = randmat(rng, 4, cond=1e6)
    f = decomp.qr(A)
    assert np.max(np.abs(f.Q.T @ f.Q - np.eye(4))) < 1e-10
    assert np.max(np.abs(f.Q @ f.R - A)) < 1e-10 * (1.0 + np.max(np.abs(A)))


def test_qr_property_batch(rng):
    for i in range(1000):
        n = int(rng.integers(1, 9))
        A = randmat(rng, n, cond=1e8 if i % 7 == 0 else None)
        f = decomp.qr(A)
        assert np.max(np.abs(f.Q.T @ f.Q - np.eye(n))) < 1e-12
        assert np.max(np.abs(f.Q @ f.R - A)) < 1e-12 * (1.0 + np.max(np.abs(A)))
        assert np.all(np.diagonal(f.R) >= 0.0)
        assert np.max(np.abs(np.tril(f.R, -1))) == 0.0


def test_qr_rejects_nonsquare_and_nonfinite():
    with pytest.raises(ContractViolationError):
        decomp.qr(np.ones((2, 3)))
    with pytest.raises(NumericalDomainError):
        decomp.qr(np.array([[1.0, np.nan], [0.0, 1.0]]))


# -- SVD -----------------------------------------------------------------------


def test_svd_diagonal():
    f = decomp.svd(np.diag([5.0, 1.0]))
    assert np.array_equal(f.S, [5.0, 1.0])


def test_svd_zero_matrix():
    f = decomp.svd(np.zeros((3, 2)))
    assert np.array_equal(f.S, [0.0, 0.0])
    assert np.max(np.abs(f.U.T @ f.U - np.eye(3))) == 0.0


def test_svd_tiny_singular_value_closed_form():
    eps = 1e-10
    f = decomp.svd(np.array([[0.0, 1.0], [-eps, 0.0]]))
    assert abs(f.S[0] - 1.0) < 1e-15
    assert abs(f.S[1] - eps) < 1e-15


def test_svd_property_batch(rng):
    for i in range(1000):
        n = int(rng.integers(1, 9))
        A = randmat(rng, n, cond=1e8 if i % 7 == 0 else None)
        f = decomp.svd(A)
        recon = np.max(np.abs(f.U[:, :n] @ np.diag(f.S) @ f.V.T - A))
        assert recon < 1e-11 * (1.0 + np.max(np.abs(A)))
        assert np.max(np.abs(f.U.T @ f.U - np.eye(n))) < 1e-12
        assert np.max(np.abs(f.V.T @ f.V - np.eye(n))) < 1e-12
        assert np.all(np.diff(f.S) <= 0.0) and np.all(f.S >= 0.0)


def test_svd_rectangular_shapes(rng):
    for shape in ((5, 2), (2, 5), (4, 4), (1, 3)):
        A = rng.standard_normal(shape)
        f = decomp.svd(A)
        m, n = shape
        k = min(m, n)
        S = np.zeros((m, n))
        S[:k, :k] = np.diag(f.S)
        assert np.max(np.abs(f.U @ S @ f.V.T - A)) < 1e-12 * (1.0 + np.max(np.abs(A)))
        got = np.sort(f.S)[::-1]
        want = np.sort(np.linalg.svd(A, compute_uv=False))[::-1]
        assert np.max(np.abs(got - want)) < 1e-12 * (1.0 + want[0])


def test_svd_sign_convention_is_deterministic(rng):
    A = rng.standard_normal((4, 4))
    f1 = decomp.svd(A)
    f2 = decomp.svd(A.copy())
    assert np.array_equal(f1.U, f2.U) and np.array_equal(f1.V, f2.V)
    for j in range(4):
        i = int(np.argmax(np.abs(f1.U[:, j])))
        assert f1.U[i, j] > 0.0


def test_svd_product_equals_abs_det(rng):
    for _ in range(50):
        n = int(rng.integers(1, 7))
        A = rng.standard_normal((n, n))
        s = decomp.singular_values(A)
        det = abs(np.linalg.det(A))
        if det > 1e-12:
            assert abs(np.prod(s) - det) / det < 1e-8


def test_svd_of_gram_is_squared_singular_values(rng):
    """Pins the Gram-matrix convention the local estimator relies on."""
    for _ in range(50):
        n = int(rng.integers(1, 7))
        A = rng.standard_normal((n + 1, n))
        s = decomp.singular_values(A)
        g = decomp.singular_values(A.T @ A)
        assert np.max(np.abs(g - s**2)) / (1.0 + s[0] ** 2) < 1e-6


# -- log singular values -------------------------------------------------------


def test_log_singular_values_scaled_identity():
    logs = decomp.log_singular_values(math.e * np.eye(2))
    assert np.max(np.abs(logs - 1.0)) < 1e-14


def test_log_singular_values_floor_engaged():
    logs = decomp.log_singular_values(np.zeros((2, 2)), floor=1e-300)
    assert np.array_equal(logs, np.full(2, math.log(1e-300)))
    assert np.all(np.isfinite(logs))


def test_log_singular_values_matches_closed_form(rng):
    from lyapco.validate import svd_2x2_oracle

    for _ in range(25):
        A = rng.standard_normal((2, 2))
        want = np.log(np.maximum(svd_2x2_oracle(*A.reshape(-1)), 1e-300))
        got = decomp.log_singular_values(A)
        assert np.max(np.abs(got - want)) < 1e-10


def test_log_singular_values_rejects_bad_floor():
    with pytest.raises(ContractViolationError):
        decomp.log_singular_values(np.eye(2), floor=0.0)


def test_svd_convergence_budget_error(monkeypatch):
    from lyapco import decomp as d

    monkeypatch.setattr(d, "_JACOBI_MAX_SWEEPS", 0)
    with pytest.raises(d.ConvergenceError) as exc:
        d.svd(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert exc.value.residual is None or exc.value.residual >= 0.0
