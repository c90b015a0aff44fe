# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: fused rollouts and per-step spectrum accumulators.

Mirrors :mod:`lyapco._purekernels` operation for operation (same algorithms,
same constants); the test suite asserts agreement between the two backends.
All inner loops run without the GIL so worker threads can chunk the
embarrassingly-parallel per-step work.
"""

import numpy as np

from libc.math cimport sin, cos, log, sqrt, fabs, isfinite

COMPILED = True

# Compiled kernels handle state dimensions up to 8 (stack buffers below).

cdef double TWO_PI = 6.283185307179586476925287
cdef double GRAVITY = 9.81
cdef double R_HIP = 0.10
cdef double R_KNEE = 0.05
cdef double I_HIP = 0.02
cdef double I_KNEE = 0.01
cdef double BLOWUP_LIMIT = 1e12
cdef double JACOBI_TOL = 1e-15


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------


cdef inline bint _finite_ok(double* y, int d) nogil:
    cdef int i
    for i in range(d):
        if not isfinite(y[i]) or fabs(y[i]) > BLOWUP_LIMIT:
            return 0
    return 1


cdef inline void _step_c(int code, double* x, double* y, double* th, double dt, int d) nogil:
    cdef int i, j
    cdef double q, v, mu, acc
    cdef double q1, q2, v1, v2
    cdef double s1, c1, s2, c2, s12, c12
    cdef double L1, L2, m1, m2, g
    cdef double ex, ey, j11, j12, j21, j22, u1, u2
    cdef double l1l2c2, m11, m12, m22, h, cor1, cor2, g1, g2, r1, r2, det, a1, a2
    cdef double z, qh, qk, vz, vh, vk, ph
    cdef double wh, wk, arg_h, arg_k, qr_h, vr_h, qr_k, vr_k, uh, uk
    cdef double ext, ext_rate, f_leg, pen, pen_rate, ramp, slope, f_contact
    cdef double az, ah, ak, pr

    if code == 0:  # linear: theta holds A row-major
        for i in range(d):
            acc = th[i * d] * x[0]
            for j in range(1, d):
                acc = acc + th[i * d + j] * x[j]
            y[i] = acc
    elif code == 1:  # logistic
        y[0] = th[0] * x[0] * (1.0 - x[0])
    elif code == 2:  # henon
        y[0] = 1.0 + x[1] - th[0] * (x[0] * x[0])
        y[1] = th[1] * x[0]
    elif code == 3:  # vanderpol, explicit Euler
        mu = th[0]
        q = x[0]
        v = x[1]
        y[0] = q + dt * v
        y[1] = v + dt * (mu * (1.0 - q * q) * v - q)
    elif code == 4:  # manipulator2r, semi-implicit Euler
        q1 = x[0]
        q2 = x[1]
        v1 = x[2]
        v2 = x[3]
        L1 = th[0]
        L2 = th[1]
        m1 = th[2]
        m2 = th[3]
        g = th[14]
        s1 = sin(q1)
        c1 = cos(q1)
        s2 = sin(q2)
        c2 = cos(q2)
        s12 = sin(q1 + q2)
        c12 = cos(q1 + q2)
        ex = L1 * c1 + L2 * c12 - th[12]
        ey = L1 * s1 + L2 * s12 - th[13]
        j11 = -(L1 * s1) - L2 * s12
        j12 = -(L2 * s12)
        j21 = L1 * c1 + L2 * c12
        j22 = L2 * c12
        u1 = -(th[4] * (q1 - th[10])) - th[6] * v1 - th[8] * (j11 * ex + j21 * ey)
        u2 = -(th[5] * (q2 - th[11])) - th[7] * v2 - th[9] * (j12 * ex + j22 * ey)
        l1l2c2 = L1 * L2 * c2
        m11 = m1 * (L1 * L1) + m2 * (L1 * L1 + 2.0 * l1l2c2 + L2 * L2)
        m12 = m2 * (l1l2c2 + L2 * L2)
        m22 = m2 * (L2 * L2)
        h = m2 * (L1 * L2) * s2
        cor1 = -(h * v2 * (2.0 * v1 + v2))
        cor2 = h * (v1 * v1)
        g1 = (m1 + m2) * g * L1 * c1 + m2 * g * L2 * c12
        g2 = m2 * g * L2 * c12
        r1 = u1 - cor1 - g1
        r2 = u2 - cor2 - g2
        det = m11 * m22 - m12 * m12
        if fabs(det) < 1e-12:
            y[0] = 1.0 / 0.0  # force the blow-up path
            y[1] = y[0]
            y[2] = y[0]
            y[3] = y[0]
            return
        a1 = (m22 * r1 - m12 * r2) / det
        a2 = (m11 * r2 - m12 * r1) / det
        y[2] = v1 + dt * a1
        y[3] = v2 + dt * a2
        y[0] = q1 + dt * y[2]
        y[1] = q2 + dt * y[3]
    elif code == 5:  # hopper1d
        z = x[0]
        qh = x[1]
        qk = x[2]
        vz = x[3]
        vh = x[4]
        vk = x[5]
        ph = x[6]
        wh = TWO_PI * th[9]
        wk = TWO_PI * th[10]
        arg_h = wh * ph + th[11]
        arg_k = wk * ph + th[12]
        qr_h = th[16] + th[7] * sin(arg_h)
        vr_h = th[7] * wh * cos(arg_h)
        qr_k = th[17] + th[8] * sin(arg_k)
        vr_k = th[8] * wk * cos(arg_k)
        uh = th[14] * (qr_h - qh) + th[15] * (vr_h - vh)
        uk = th[14] * (qr_k - qk) + th[15] * (vr_k - vk)
        ext = R_HIP * qh + R_KNEE * qk
        ext_rate = R_HIP * vh + R_KNEE * vk
        f_leg = -(th[2] * ext) - th[3] * ext_rate
        pen = (th[1] + ext) - z
        pen_rate = ext_rate - vz
        if pen <= 0.0:
            ramp = 0.0
            slope = 0.0
        elif pen >= th[6]:
            ramp = pen - 0.5 * th[6]
            slope = 1.0
        else:
            ramp = pen * pen / (2.0 * th[6])
            slope = pen / th[6]
        pr = pen_rate if pen_rate > 0.0 else 0.0
        f_contact = th[4] * ramp + th[5] * slope * pr
        az = f_contact / th[0] - GRAVITY
        ah = (uh + R_HIP * (f_leg - f_contact)) / I_HIP
        ak = (uk + R_KNEE * (f_leg - f_contact)) / I_KNEE
        y[3] = vz + dt * az
        y[4] = vh + dt * ah
        y[5] = vk + dt * ak
        y[0] = z + dt * y[3]
        y[1] = qh + dt * y[4]
        y[2] = qk + dt * y[5]
        y[6] = ph + dt


def rollout(int kernel_code, x0, theta, Py_ssize_t n, double dt, int dim):
    """Iterate the map n times; returns (states, fail_index)."""
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[::1] thv = np.ascontiguousarray(theta, dtype=np.float64)
    cdef int d = x0v.shape[0]
    if d > 8:
        raise ValueError("compiled kernels support dimensions up to 8")
    states_arr = np.empty((n + 1, d))
    cdef double[:, ::1] S = states_arr
    cdef double xbuf[8]
    cdef double ybuf[8]
    cdef double* th = &thv[0]
    cdef Py_ssize_t i, fail = -1
    cdef int j
    for j in range(d):
        S[0, j] = x0v[j]
        xbuf[j] = x0v[j]
    with nogil:
        for i in range(n):
            _step_c(kernel_code, xbuf, ybuf, th, dt, d)
            if not _finite_ok(ybuf, d):
                fail = i
                break
            for j in range(d):
                S[i + 1, j] = ybuf[j]
                xbuf[j] = ybuf[j]
    return states_arr, fail


# ---------------------------------------------------------------------------
# spectrum accumulators
# ---------------------------------------------------------------------------


cdef void _householder_qr(double* B, double* Q, double* rdiag, int d) nogil:
    """QR of d x d B (row-major, overwritten); Q accumulated explicitly."""
    cdef int i, j, k
    cdef double norm, vsq, coef
    cdef double v[8]
    for i in range(d):
        for j in range(d):
            Q[i * d + j] = 1.0 if i == j else 0.0
    for j in range(d - 1):
        norm = 0.0
        for i in range(j, d):
            norm += B[i * d + j] * B[i * d + j]
        norm = sqrt(norm)
        if norm == 0.0:
            continue
        for i in range(j, d):
            v[i] = B[i * d + j]
        if v[j] >= 0.0:
            v[j] += norm
        else:
            v[j] -= norm
        vsq = 0.0
        for i in range(j, d):
            vsq += v[i] * v[i]
        if vsq == 0.0:
            continue
        # R[j:, j:] -= outer(v, (2/vsq) * (v @ R[j:, j:]))
        for k in range(j, d):
            coef = 0.0
            for i in range(j, d):
                coef += v[i] * B[i * d + k]
            coef *= 2.0 / vsq
            for i in range(j, d):
                B[i * d + k] -= v[i] * coef
        # Q[:, j:] -= outer(Q[:, j:] @ v, (2/vsq) * v)
        for i in range(d):
            coef = 0.0
            for k in range(j, d):
                coef += Q[i * d + k] * v[k]
            coef *= 2.0 / vsq
            for k in range(j, d):
                Q[i * d + k] -= coef * v[k]
    # nonnegative-diagonal convention: flip Q columns where R_jj < 0
    for j in range(d):
        rdiag[j] = B[j * d + j]
        if rdiag[j] < 0.0:
            rdiag[j] = -rdiag[j]
            for i in range(d):
                Q[i * d + j] = -Q[i * d + j]


def qr_propagated_logs(J, double floor):
    """Benettin recursion with re-orthonormalization every step."""
    cdef double[:, :, ::1] Jv = np.ascontiguousarray(J, dtype=np.float64)
    cdef Py_ssize_t n = Jv.shape[0]
    cdef int d = Jv.shape[1]
    if d > 8:
        raise ValueError("compiled kernels support dimensions up to 8")
    logs_arr = np.empty((n, d))
    cdef double[:, ::1] logs = logs_arr
    cdef double Q[64]
    cdef double Qn[64]
    cdef double B[64]
    cdef double rdiag[8]
    cdef Py_ssize_t i
    cdef int r, c, k
    cdef double acc
    with nogil:
        if d == 1:
            for i in range(n):
                acc = fabs(Jv[i, 0, 0])
                logs[i, 0] = log(acc if acc > floor else floor)
        else:
            for r in range(d):
                for c in range(d):
                    Q[r * d + c] = 1.0 if r == c else 0.0
            for i in range(n):
                for r in range(d):
                    for c in range(d):
                        acc = 0.0
                        for k in range(d):
                            acc += Jv[i, r, k] * Q[k * d + c]
                        B[r * d + c] = acc
                _householder_qr(B, Qn, rdiag, d)
                for r in range(d):
                    logs[i, r] = log(rdiag[r] if rdiag[r] > floor else floor)
                for r in range(d * d):
                    Q[r] = Qn[r]
    return logs_arr


def qr_local_logs(J, double[:, ::1] out, Py_ssize_t start, Py_ssize_t stop, double floor):
    """Per-step QR of the raw Jacobian; |R_jj| equals the reduced column norm."""
    cdef double[:, :, ::1] Jv = np.ascontiguousarray(J, dtype=np.float64)
    cdef int d = Jv.shape[1]
    if d > 8:
        raise ValueError("compiled kernels support dimensions up to 8")
    cdef double B[64]
    cdef double v[8]
    cdef Py_ssize_t m
    cdef int i, j, k
    cdef double norm, vsq, coef
    with nogil:
        for m in range(start, stop):
            for i in range(d):
                for j in range(d):
                    B[i * d + j] = Jv[m, i, j]
            for j in range(d):
                norm = 0.0
                for i in range(j, d):
                    norm += B[i * d + j] * B[i * d + j]
                norm = sqrt(norm)
                out[m, j] = log(norm if norm > floor else floor)
                if j == d - 1:
                    break
                for i in range(j, d):
                    v[i] = B[i * d + j]
                if v[j] >= 0.0:
                    v[j] += norm
                else:
                    v[j] -= norm
                vsq = 0.0
                for i in range(j, d):
                    vsq += v[i] * v[i]
                if vsq == 0.0:
                    continue
                for k in range(j + 1, d):
                    coef = 0.0
                    for i in range(j, d):
                        coef += v[i] * B[i * d + k]
                    coef *= 2.0 / vsq
                    for i in range(j, d):
                        B[i * d + k] -= v[i] * coef
    return -1


def gram_svd_logs(J, double[:, ::1] out, Py_ssize_t start, Py_ssize_t stop, double floor,
                  int max_sweeps=30):
    """Per-step singular values of J^T J via one-sided Jacobi, logs descending."""
    cdef double[:, :, ::1] Jv = np.ascontiguousarray(J, dtype=np.float64)
    cdef Py_ssize_t nrows = Jv.shape[1]
    cdef int d = Jv.shape[2]
    if d > 8:
        raise ValueError("compiled kernels support dimensions up to 8")
    cdef double G[64]
    cdef double sig[8]
    cdef Py_ssize_t m, fail = -1
    cdef int i, j, k, p, q, sweep
    cdef bint rotated, converged
    cdef double alpha, beta, gamma, denom, tau, t, c, s, tmp, acc
    with nogil:
        for m in range(start, stop):
            # Gram matrix J^T J (d x d, symmetric)
            for i in range(d):
                for j in range(d):
                    acc = 0.0
                    for k in range(nrows):
                        acc += Jv[m, k, i] * Jv[m, k, j]
                    G[i * d + j] = acc
            if d == 1:
                acc = fabs(G[0])
                out[m, 0] = log(acc if acc > floor else floor)
                continue
            converged = 0
            for sweep in range(max_sweeps):
                rotated = 0
                for p in range(d - 1):
                    for q in range(p + 1, d):
                        alpha = 0.0
                        beta = 0.0
                        gamma = 0.0
                        for k in range(d):
                            alpha += G[k * d + p] * G[k * d + p]
                            beta += G[k * d + q] * G[k * d + q]
                            gamma += G[k * d + p] * G[k * d + q]
                        denom = sqrt(alpha * beta)
                        if denom == 0.0 or fabs(gamma) <= JACOBI_TOL * denom:
                            continue
                        rotated = 1
                        tau = (beta - alpha) / (2.0 * gamma)
                        if tau >= 0.0:
                            t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                        else:
                            t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                        c = 1.0 / sqrt(1.0 + t * t)
                        s = t * c
                        for k in range(d):
                            tmp = G[k * d + p]
                            G[k * d + p] = c * tmp - s * G[k * d + q]
                            G[k * d + q] = s * tmp + c * G[k * d + q]
                if not rotated:
                    converged = 1
                    break
            if not converged:
                fail = m
                break
            for j in range(d):
                acc = 0.0
                for k in range(d):
                    acc += G[k * d + j] * G[k * d + j]
                sig[j] = sqrt(acc)
            # insertion sort descending
            for i in range(1, d):
                tmp = sig[i]
                j = i - 1
                while j >= 0 and sig[j] < tmp:
                    sig[j + 1] = sig[j]
                    j -= 1
                sig[j + 1] = tmp
            for j in range(d):
                out[m, j] = log(sig[j] if sig[j] > floor else floor)
    return fail
