"""Discrete transition maps: benchmark chaotic maps, a Van der Pol oscillator,
a gravity-loaded two-link arm under PD + Cartesian-stiffness control, and a
one-dimensional hopping mass with smooth penalty contact driven by a
sinusoidal gait.

Every map exposes ``step_math(x, theta, t)`` written against the :mod:`.jets`
dispatch functions, so the same code path serves plain floats, batched state
arrays (one call evaluates a whole trajectory of Jacobians) and nested jets
for second derivatives.  The module-level ``_step_*`` functions are the single
source of truth; the compiled kernels mirror their arithmetic operation for
operation and are tested against them.

Conventions fixed here because no single standard exists:

* joint angles are measured from the +x axis, gravity points along -y;
* controller feedback is restoring (negative feedback), so positive gains
  stabilize;
* the hopper is autonomous: a phase coordinate advancing by dt per step
  replaces wall-clock time in the gait reference, so the spectrum theory for
  autonomous maps applies unchanged.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import jets
from .errors import ConfigError, ContractViolationError, NumericalDomainError, SimulationBlowupError

TWO_PI = 2.0 * math.pi
GRAVITY_DEFAULT = 9.81

# Hopper model constants (not exposed as parameters: they set the internal
# gearing of the leg, not the design space of the studies).
HOPPER_R_HIP = 0.10  # m of leg length per rad of hip coordinate
HOPPER_R_KNEE = 0.05  # m of leg length per rad of knee coordinate
HOPPER_I_HIP = 0.02  # kg m^2
HOPPER_I_KNEE = 0.01  # kg m^2

_BLOWUP_LIMIT = 1e12


# ---------------------------------------------------------------------------
# step functions (jet-generic, batched over leading axes)
# ---------------------------------------------------------------------------


def _step_linear(x, theta, t, dt, dim):
    rows = []
    for i in range(dim):
        acc = theta[..., i * dim] * x[..., 0]
        for j in range(1, dim):
            acc = acc + theta[..., i * dim + j] * x[..., j]
        rows.append(acc)
    return jets.stack_last(rows)


def _step_logistic(x, theta, t, dt):
    r = theta[..., 0]
    x0 = x[..., 0]
    return jets.stack_last([r * x0 * (1.0 - x0)])


def _step_henon(x, theta, t, dt):
    a = theta[..., 0]
    b = theta[..., 1]
    x0 = x[..., 0]
    x1 = x[..., 1]
    return jets.stack_last([1.0 + x1 - a * (x0 * x0), b * x0])


def _step_vanderpol(x, theta, t, dt):
    # Explicit Euler; the acceptance studies use dt = 1e-3.
    mu = theta[..., 0]
    q = x[..., 0]
    v = x[..., 1]
    nq = q + dt * v
    nv = v + dt * (mu * (1.0 - q * q) * v - q)
    return jets.stack_last([nq, nv])


def _arm_trig(q1, q2):
    s1 = jets.sin(q1)
    c1 = jets.cos(q1)
    s2 = jets.sin(q2)
    c2 = jets.cos(q2)
    q12 = q1 + q2
    s12 = jets.sin(q12)
    c12 = jets.cos(q12)
    return s1, c1, s2, c2, s12, c12


def _arm_control(theta, q1, q2, v1, v2, s1, c1, s12, c12):
    """Joint PD plus Cartesian stiffness, all terms restoring."""
    L1 = theta[..., 0]
    L2 = theta[..., 1]
    kp1 = theta[..., 4]
    kp2 = theta[..., 5]
    kd1 = theta[..., 6]
    kd2 = theta[..., 7]
    kc1 = theta[..., 8]
    kc2 = theta[..., 9]
    qr1 = theta[..., 10]
    qr2 = theta[..., 11]
    xr1 = theta[..., 12]
    xr2 = theta[..., 13]
    ex = L1 * c1 + L2 * c12 - xr1
    ey = L1 * s1 + L2 * s12 - xr2
    # End-effector Jacobian of the forward kinematics.
    j11 = -(L1 * s1) - L2 * s12
    j12 = -(L2 * s12)
    j21 = L1 * c1 + L2 * c12
    j22 = L2 * c12
    u1 = -(kp1 * (q1 - qr1)) - kd1 * v1 - kc1 * (j11 * ex + j21 * ey)
    u2 = -(kp2 * (q2 - qr2)) - kd2 * v2 - kc2 * (j12 * ex + j22 * ey)
    return u1, u2


def _step_manipulator(x, theta, t, dt):
    """Semi-implicit Euler on the closed-form point-mass two-link dynamics."""
    q1 = x[..., 0]
    q2 = x[..., 1]
    v1 = x[..., 2]
    v2 = x[..., 3]
    L1 = theta[..., 0]
    L2 = theta[..., 1]
    m1 = theta[..., 2]
    m2 = theta[..., 3]
    g = theta[..., 14]
    s1, c1, s2, c2, s12, c12 = _arm_trig(q1, q2)
    u1, u2 = _arm_control(theta, q1, q2, v1, v2, s1, c1, s12, c12)
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
    detv = np.asarray(jets.value_of(det))
    if np.any(np.abs(detv) < 1e-12):
        raise NumericalDomainError(
            "mass matrix is numerically singular (det = %g)" % float(np.min(np.abs(detv)))
        )
    a1 = (m22 * r1 - m12 * r2) / det
    a2 = (m11 * r2 - m12 * r1) / det
    nv1 = v1 + dt * a1
    nv2 = v2 + dt * a2
    nq1 = q1 + dt * nv1
    nq2 = q2 + dt * nv2
    return jets.stack_last([nq1, nq2, nv1, nv2])


def _ramp(u, width):
    """C^1 smoothed ramp: 0 below zero, quadratic blend of width ``width``,
    then linear with unit slope."""
    quad = u * u / (2.0 * width)
    lin = u - 0.5 * width
    return jets.where(u <= 0.0, 0.0, jets.where(u >= width, lin, quad))


def _ramp_slope(u, width):
    return jets.where(u <= 0.0, 0.0, jets.where(u >= width, 1.0, u / width))


def _gait_channel(qbase, amp, freq, phase0, t):
    w = TWO_PI * freq
    arg = w * t + phase0
    return qbase + amp * jets.sin(arg), amp * w * jets.cos(arg)


def _step_hopper(x, theta, t, dt):
    """Vertical mass on an actuated two-joint leg with smooth penalty contact.

    State: (z, q_hip, q_knee, vz, v_hip, v_knee, phase).  The gait reference
    is evaluated at the phase coordinate, the joint PD tracks it, the passive
    leg spring-damper acts on the leg extension, and ground reaction is a
    smooth penalty on foot penetration with non-adhesive damping.
    """
    z = x[..., 0]
    qh = x[..., 1]
    qk = x[..., 2]
    vz = x[..., 3]
    vh = x[..., 4]
    vk = x[..., 5]
    ph = x[..., 6]
    mass = theta[..., 0]
    leg_rest = theta[..., 1]
    k_leg = theta[..., 2]
    c_leg = theta[..., 3]
    k_ground = theta[..., 4]
    c_ground = theta[..., 5]
    width = theta[..., 6]
    a0 = theta[..., 7]
    a1 = theta[..., 8]
    f0 = theta[..., 9]
    f1 = theta[..., 10]
    p0 = theta[..., 11]
    p1 = theta[..., 12]
    kp = theta[..., 14]
    kd = theta[..., 15]
    qref_hip = theta[..., 16]
    qref_knee = theta[..., 17]
    qr_h, vr_h = _gait_channel(qref_hip, a0, f0, p0, ph)
    qr_k, vr_k = _gait_channel(qref_knee, a1, f1, p1, ph)
    uh = kp * (qr_h - qh) + kd * (vr_h - vh)
    uk = kp * (qr_k - qk) + kd * (vr_k - vk)
    ext = HOPPER_R_HIP * qh + HOPPER_R_KNEE * qk
    ext_rate = HOPPER_R_HIP * vh + HOPPER_R_KNEE * vk
    f_leg = -(k_leg * ext) - c_leg * ext_rate
    pen = (leg_rest + ext) - z  # penetration depth of the foot
    pen_rate = ext_rate - vz
    f_contact = k_ground * _ramp(pen, width) + c_ground * _ramp_slope(pen, width) * jets.maximum(
        0.0, pen_rate
    )
    az = f_contact / mass - GRAVITY_DEFAULT
    ah = (uh + HOPPER_R_HIP * (f_leg - f_contact)) / HOPPER_I_HIP
    ak = (uk + HOPPER_R_KNEE * (f_leg - f_contact)) / HOPPER_I_KNEE
    nvz = vz + dt * az
    nvh = vh + dt * ah
    nvk = vk + dt * ak
    nz = z + dt * nvz
    nqh = qh + dt * nvh
    nqk = qk + dt * nvk
    nph = ph + dt
    return jets.stack_last([nz, nqh, nqk, nvz, nvh, nvk, nph])


# ---------------------------------------------------------------------------
# parameter bundles
# ---------------------------------------------------------------------------


def _as_pair(v, name):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size == 1:
        arr = np.array([arr[0], arr[0]])
    if arr.shape != (2,):
        raise ConfigError("%s must hold 2 values, got %r" % (name, v))
    return arr


@dataclass
class ManipulatorParams:
    """Two-link arm: lengths, point masses at the link tips, controller gains,
    joint and Cartesian references, gravity."""

    L1: float = 1.0
    L2: float = 1.0
    m1: float = 0.5
    m2: float = 0.5
    K_p: np.ndarray = field(default_factory=lambda: np.array([20.0, 20.0]))
    K_d: np.ndarray = field(default_factory=lambda: np.array([5.0, 5.0]))
    K_c: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0]))
    q_ref: np.ndarray = None
    x_ref: np.ndarray = field(default_factory=lambda: np.array([0.7, 0.7]))
    g: float = GRAVITY_DEFAULT

    def __post_init__(self):
        self.K_p = _as_pair(self.K_p, "K_p")
        self.K_d = _as_pair(self.K_d, "K_d")
        self.K_c = _as_pair(self.K_c, "K_c")
        self.x_ref = _as_pair(self.x_ref, "x_ref")
        if self.q_ref is None:
            self.q_ref = inverse_kinematics_2r(self.L1, self.L2, self.x_ref)
        self.q_ref = _as_pair(self.q_ref, "q_ref")
        for name in ("L1", "L2", "m1", "m2"):
            if not getattr(self, name) > 0.0:
                raise ConfigError("%s must be strictly positive" % name)
        for name in ("K_p", "K_d", "K_c"):
            if np.any(getattr(self, name) < 0.0):
                raise ConfigError("%s gains must be nonnegative" % name)

    def to_theta(self):
        return np.array(
            [
                self.L1,
                self.L2,
                self.m1,
                self.m2,
                self.K_p[0],
                self.K_p[1],
                self.K_d[0],
                self.K_d[1],
                self.K_c[0],
                self.K_c[1],
                self.q_ref[0],
                self.q_ref[1],
                self.x_ref[0],
                self.x_ref[1],
                self.g,
            ]
        )

    @classmethod
    def from_theta(cls, theta):
        theta = np.asarray(theta, dtype=float)
        return cls(
            L1=theta[0],
            L2=theta[1],
            m1=theta[2],
            m2=theta[3],
            K_p=theta[4:6],
            K_d=theta[6:8],
            K_c=theta[8:10],
            q_ref=theta[10:12],
            x_ref=theta[12:14],
            g=theta[14],
        )


def inverse_kinematics_2r(L1, L2, target, elbow_up=True):
    """Closed-form 2R inverse kinematics (used to pick default joint refs)."""
    x, y = float(target[0]), float(target[1])
    r2 = x * x + y * y
    c2 = (r2 - L1 * L1 - L2 * L2) / (2.0 * L1 * L2)
    if not -1.0 <= c2 <= 1.0:
        raise ContractViolationError("target %r is out of reach for L1=%g, L2=%g" % (target, L1, L2))
    q2 = math.acos(c2) if elbow_up else -math.acos(c2)
    q1 = math.atan2(y, x) - math.atan2(L2 * math.sin(q2), L1 + L2 * math.cos(q2))
    return np.array([q1, q2])


@dataclass
class GaitParams:
    """Shared-amplitude sinusoidal references for the hip/knee joint families,
    with an opposing-pair phase offset, plus the tracking PD gains."""

    A0: float = 0.8
    A1: float = 0.5
    F0: float = 2.0
    F1: float = 2.0
    P0: float = 0.0
    P1: float = -0.5 * math.pi
    delta: float = math.pi
    k_p: float = 60.0
    k_d: float = 1.5
    q_ref_hip: float = 0.0
    q_ref_knee: float = 0.0

    def __post_init__(self):
        if self.F0 < 0.0 or self.F1 < 0.0:
            raise ConfigError("gait frequencies must be nonnegative")


@dataclass
class HopperParams:
    mass: float = 2.0
    leg_rest: float = 0.5
    leg_stiffness: float = 800.0
    leg_damping: float = 10.0
    ground_stiffness: float = 2e4
    ground_damping: float = 100.0
    contact_width: float = 0.01
    gait: GaitParams = field(default_factory=GaitParams)

    def __post_init__(self):
        if isinstance(self.gait, dict):
            self.gait = GaitParams(**self.gait)
        for name in (
            "mass",
            "leg_rest",
            "leg_stiffness",
            "ground_stiffness",
            "contact_width",
        ):
            if not getattr(self, name) > 0.0:
                raise ConfigError("%s must be strictly positive" % name)
        if self.leg_damping < 0.0 or self.ground_damping < 0.0:
            raise ConfigError("damping coefficients must be nonnegative")

    def to_theta(self):
        g = self.gait
        return np.array(
            [
                self.mass,
                self.leg_rest,
                self.leg_stiffness,
                self.leg_damping,
                self.ground_stiffness,
                self.ground_damping,
                self.contact_width,
                g.A0,
                g.A1,
                g.F0,
                g.F1,
                g.P0,
                g.P1,
                g.delta,
                g.k_p,
                g.k_d,
                g.q_ref_hip,
                g.q_ref_knee,
            ]
        )

    @classmethod
    def from_theta(cls, theta):
        theta = np.asarray(theta, dtype=float)
        gait = GaitParams(
            A0=theta[7],
            A1=theta[8],
            F0=theta[9],
            F1=theta[10],
            P0=theta[11],
            P1=theta[12],
            delta=theta[13],
            k_p=theta[14],
            k_d=theta[15],
            q_ref_hip=theta[16],
            q_ref_knee=theta[17],
        )
        return cls(
            mass=theta[0],
            leg_rest=theta[1],
            leg_stiffness=theta[2],
            leg_damping=theta[3],
            ground_stiffness=theta[4],
            ground_damping=theta[5],
            contact_width=theta[6],
            gait=gait,
        )


# ---------------------------------------------------------------------------
# transition-map classes
# ---------------------------------------------------------------------------


class TransitionMap:
    """A named discrete system x' = Phi(x; theta) with a fixed timestep."""

    system_id = None
    kernel_code = None

    def __init__(self, theta, dt, state_dim, param_names):
        self.theta = np.asarray(theta, dtype=float)
        self.dt = float(dt)
        self.state_dim = int(state_dim)
        self.param_names = tuple(param_names)
        if self.theta.shape != (len(self.param_names),):
            raise ContractViolationError(
                "%s expects %d parameters %s, got %d"
                % (self.system_id, len(self.param_names), self.param_names, self.theta.size)
            )
        if not self.dt > 0.0:
            raise ConfigError("dt must be positive")

    # subclasses implement the actual map
    def step_math(self, x, theta, t=0.0):
        raise NotImplementedError

    def step(self, x, t=0.0, theta=None):
        """One validated step on plain floats."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.state_dim,):
            raise ContractViolationError(
                "state for %s must have shape (%d,), got %s"
                % (self.system_id, self.state_dim, x.shape)
            )
        if not np.isfinite(x).all():
            raise ContractViolationError("state contains non-finite entries: %r" % (x,))
        theta = self.theta if theta is None else np.asarray(theta, dtype=float)
        y = np.asarray(self.step_math(x, theta, t), dtype=float)
        if not np.isfinite(y).all() or np.any(np.abs(y) > _BLOWUP_LIMIT):
            raise SimulationBlowupError(
                "%s produced a non-finite or diverging state" % self.system_id, step_index=0
            )
        return y

    def with_theta(self, theta):
        clone = type(self).__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.theta = np.asarray(theta, dtype=float)
        if clone.theta.shape != (len(self.param_names),):
            raise ContractViolationError(
                "%s expects %d parameters, got %d"
                % (self.system_id, len(self.param_names), clone.theta.size)
            )
        return clone

    def param_index(self, name):
        try:
            return self.param_names.index(name)
        except ValueError:
            raise ConfigError(
                "unknown parameter %r for system %r (known: %s)"
                % (name, self.system_id, ", ".join(self.param_names))
            ) from None

    def sample_state(self, rng):
        lo, hi = self.state_box()
        return rng.uniform(lo, hi)

    def state_box(self):
        raise NotImplementedError

    # -- loss channels (override where physically meaningful) ----------------
    def position(self, x):
        raise ConfigError("system %r has no position output" % self.system_id)

    def velocity_scalar(self, x):
        raise ConfigError("system %r has no scalar velocity output" % self.system_id)

    def height(self, x):
        raise ConfigError("system %r has no height output" % self.system_id)

    def control(self, x, t=0.0, theta=None):
        raise ConfigError("system %r has no control output" % self.system_id)


class LinearMap(TransitionMap):
    """x' = A x with theta holding A row-major; the sandbox for exact spectra."""

    system_id = "linear"
    kernel_code = 0

    def __init__(self, theta=None, dt=1.0, dim=1):
        dim = int(dim)
        if theta is None:
            theta = np.eye(dim).reshape(-1)
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if dim == 1:
            names = ("a",)
        else:
            names = tuple("a%d%d" % (i, j) for i in range(dim) for j in range(dim))
        super().__init__(theta, dt, dim, names)

    def step_math(self, x, theta, t=0.0):
        return _step_linear(x, theta, t, self.dt, self.state_dim)

    def state_box(self):
        d = self.state_dim
        return -np.ones(d), np.ones(d)

    def matrix(self):
        return self.theta.reshape(self.state_dim, self.state_dim)

    def position(self, x):
        return x


class LogisticMap(TransitionMap):
    system_id = "logistic"
    kernel_code = 1

    def __init__(self, theta=None, dt=1.0):
        if theta is None:
            theta = [4.0]
        super().__init__(theta, dt, 1, ("r",))

    def step_math(self, x, theta, t=0.0):
        return _step_logistic(x, theta, t, self.dt)

    def state_box(self):
        return np.array([0.05]), np.array([0.95])


class HenonMap(TransitionMap):
    system_id = "henon"
    kernel_code = 2

    def __init__(self, theta=None, dt=1.0):
        if theta is None:
            theta = [1.4, 0.3]
        super().__init__(theta, dt, 2, ("a", "b"))

    def step_math(self, x, theta, t=0.0):
        return _step_henon(x, theta, t, self.dt)

    def state_box(self):
        return np.array([-0.5, -0.2]), np.array([0.5, 0.2])


class VanDerPolMap(TransitionMap):
    system_id = "vanderpol"
    kernel_code = 3

    def __init__(self, theta=None, dt=1e-3):
        if theta is None:
            theta = [2.0]
        super().__init__(theta, dt, 2, ("mu",))

    def step_math(self, x, theta, t=0.0):
        return _step_vanderpol(x, theta, t, self.dt)

    def state_box(self):
        return np.array([-3.0, -3.0]), np.array([3.0, 3.0])


_MANIP_PARAM_NAMES = (
    "L1",
    "L2",
    "m1",
    "m2",
    "Kp1",
    "Kp2",
    "Kd1",
    "Kd2",
    "Kc1",
    "Kc2",
    "qref1",
    "qref2",
    "xref1",
    "xref2",
    "g",
)


class Manipulator2R(TransitionMap):
    """Closed-loop two-link arm; state (q1, q2, v1, v2)."""

    system_id = "manipulator2r"
    kernel_code = 4

    def __init__(self, params=None, dt=1e-3, theta=None):
        if theta is not None:
            params = ManipulatorParams.from_theta(theta)
        elif params is None:
            params = ManipulatorParams()
        elif isinstance(params, dict):
            params = ManipulatorParams(**params)
        self.params = params
        super().__init__(params.to_theta(), dt, 4, _MANIP_PARAM_NAMES)

    def step_math(self, x, theta, t=0.0):
        return _step_manipulator(x, theta, t, self.dt)

    def with_theta(self, theta):
        clone = super().with_theta(theta)
        clone.params = ManipulatorParams.from_theta(clone.theta)
        return clone

    def state_box(self):
        return np.array([-math.pi, -math.pi, -2.0, -2.0]), np.array([math.pi, math.pi, 2.0, 2.0])

    def position(self, x):
        theta = self.theta
        q1 = x[..., 0]
        q2 = x[..., 1]
        s1, c1, _, _, s12, c12 = _arm_trig(q1, q2)
        px = theta[0] * c1 + theta[1] * c12
        py = theta[0] * s1 + theta[1] * s12
        return jets.stack_last([px, py])

    def height(self, x):
        return self.position(x)[..., 1]

    def control(self, x, t=0.0, theta=None):
        theta = self.theta if theta is None else theta
        q1 = x[..., 0]
        q2 = x[..., 1]
        v1 = x[..., 2]
        v2 = x[..., 3]
        s1, c1, _, _, s12, c12 = _arm_trig(q1, q2)
        u1, u2 = _arm_control(theta, q1, q2, v1, v2, s1, c1, s12, c12)
        return jets.stack_last([u1, u2])


_HOPPER_PARAM_NAMES = (
    "mass",
    "leg_rest",
    "leg_stiffness",
    "leg_damping",
    "ground_stiffness",
    "ground_damping",
    "contact_width",
    "A0",
    "A1",
    "F0",
    "F1",
    "P0",
    "P1",
    "delta",
    "kp",
    "kd",
    "qref_hip",
    "qref_knee",
)


class Hopper1D(TransitionMap):
    """Vertical hopper; state (z, q_hip, q_knee, vz, v_hip, v_knee, phase)."""

    system_id = "hopper1d"
    kernel_code = 5

    def __init__(self, params=None, dt=1e-3, theta=None):
        if theta is not None:
            params = HopperParams.from_theta(theta)
        elif params is None:
            params = HopperParams()
        elif isinstance(params, dict):
            params = HopperParams(**params)
        self.params = params
        super().__init__(params.to_theta(), dt, 7, _HOPPER_PARAM_NAMES)

    def step_math(self, x, theta, t=0.0):
        return _step_hopper(x, theta, t, self.dt)

    def with_theta(self, theta):
        clone = super().with_theta(theta)
        clone.params = HopperParams.from_theta(clone.theta)
        return clone

    def state_box(self):
        lo = np.array([0.40, -0.4, -0.4, -1.0, -3.0, -3.0, 0.0])
        hi = np.array([0.70, 0.4, 0.4, 1.0, 3.0, 3.0, 0.5])
        return lo, hi

    def rest_state(self):
        """A reasonable starting state: body at leg rest length, all quiet."""
        return np.array([self.params.leg_rest, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])

    def position(self, x):
        return jets.stack_last([x[..., 0]])

    def velocity_scalar(self, x):
        return x[..., 3]

    def height(self, x):
        return x[..., 0]

    def control(self, x, t=0.0, theta=None):
        theta = self.theta if theta is None else theta
        qh = x[..., 1]
        qk = x[..., 2]
        vh = x[..., 4]
        vk = x[..., 5]
        ph = x[..., 6]
        qr_h, vr_h = _gait_channel(theta[..., 16], theta[..., 7], theta[..., 9], theta[..., 11], ph)
        qr_k, vr_k = _gait_channel(theta[..., 17], theta[..., 8], theta[..., 10], theta[..., 12], ph)
        uh = theta[..., 14] * (qr_h - qh) + theta[..., 15] * (vr_h - vh)
        uk = theta[..., 14] * (qr_k - qk) + theta[..., 15] * (vr_k - vk)
        return jets.stack_last([uh, uk])


# ---------------------------------------------------------------------------
# public free-function operations
# ---------------------------------------------------------------------------


def step(tmap, x, t=0.0):
    """One discrete step of the map (validated)."""
    return tmap.step(x, t=t)


def manipulator_fk(params, q):
    """End-effector position: (L1 c1 + L2 c12, L1 s1 + L2 s12)."""
    q = np.asarray(q, dtype=float)
    c1 = np.cos(q[..., 0])
    s1 = np.sin(q[..., 0])
    c12 = np.cos(q[..., 0] + q[..., 1])
    s12 = np.sin(q[..., 0] + q[..., 1])
    return np.stack([params.L1 * c1 + params.L2 * c12, params.L1 * s1 + params.L2 * s12], axis=-1)


def manipulator_control(params, q, v):
    """Restoring joint-PD + Cartesian-stiffness torque."""
    tmap = Manipulator2R(params)
    x = np.concatenate([np.asarray(q, dtype=float), np.asarray(v, dtype=float)])
    return np.asarray(tmap.control(x), dtype=float)


def manipulator_step(params, q, v, dt=1e-3):
    """One semi-implicit Euler step; returns (q', v')."""
    tmap = Manipulator2R(params, dt=dt)
    x = np.concatenate([np.asarray(q, dtype=float), np.asarray(v, dtype=float)])
    y = tmap.step(x)
    return y[:2], y[2:]


def manipulator_mass_matrix(params, q):
    """Joint-space mass matrix (used by the energy audit and SPD checks)."""
    c2 = math.cos(float(q[1]))
    l1l2c2 = params.L1 * params.L2 * c2
    m11 = params.m1 * params.L1**2 + params.m2 * (params.L1**2 + 2.0 * l1l2c2 + params.L2**2)
    m12 = params.m2 * (l1l2c2 + params.L2**2)
    m22 = params.m2 * params.L2**2
    return np.array([[m11, m12], [m12, m22]])


def manipulator_energy(params, q, v):
    """Total mechanical energy with the potential zero at y = 0."""
    M = manipulator_mass_matrix(params, q)
    kinetic = 0.5 * float(np.asarray(v) @ M @ np.asarray(v))
    y1 = params.L1 * math.sin(float(q[0]))
    y2 = y1 + params.L2 * math.sin(float(q[0]) + float(q[1]))
    potential = params.g * (params.m1 * y1 + params.m2 * y2)
    return kinetic + potential


def gait_reference(gait, t):
    """Four reference channels (hip A, knee A, hip B, knee B) and their rates.

    The B pair runs the same sinusoids shifted by the opposing-pair offset.
    """
    t = np.asarray(t, dtype=float)
    qh_a, vh_a = _gait_channel(gait.q_ref_hip, gait.A0, gait.F0, gait.P0, t)
    qk_a, vk_a = _gait_channel(gait.q_ref_knee, gait.A1, gait.F1, gait.P1, t)
    qh_b, vh_b = _gait_channel(gait.q_ref_hip, gait.A0, gait.F0, gait.P0 + gait.delta, t)
    qk_b, vk_b = _gait_channel(gait.q_ref_knee, gait.A1, gait.F1, gait.P1 + gait.delta, t)
    q = np.stack([qh_a, qk_a, qh_b, qk_b], axis=-1)
    v = np.stack([vh_a, vk_a, vh_b, vk_b], axis=-1)
    return q, v


def hopper_contact_force(params, clearance, clearance_rate):
    """Ground reaction as a function of foot clearance (positive = airborne)."""
    pen = -np.asarray(clearance, dtype=float)
    pen_rate = -np.asarray(clearance_rate, dtype=float)
    w = params.contact_width
    spring = params.ground_stiffness * _ramp(pen, w)
    damper = params.ground_damping * _ramp_slope(pen, w) * np.maximum(0.0, pen_rate)
    return spring + damper


def hopper_step(params, x, t=0.0, dt=1e-3):
    """One hopper step (validated)."""
    return Hopper1D(params, dt=dt).step(x, t=t)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

STEP_BY_CODE = {
    1: _step_logistic,
    2: _step_henon,
    3: _step_vanderpol,
    4: _step_manipulator,
    5: _step_hopper,
}

SYSTEM_IDS = ("linear", "logistic", "henon", "vanderpol", "manipulator2r", "hopper1d")


def make_system(system_id, params=None, dt=None, dim=None):
    """Build a transition map from a config-style description."""
    if system_id == "linear":
        dim = 1 if dim is None else int(dim)
        theta = None
        if params is not None:
            if "a" in params and dim == 1:
                theta = [params["a"]]
                _reject_unknown(params, {"a"}, "linear")
            elif "matrix" in params:
                theta = np.asarray(params["matrix"], dtype=float).reshape(-1)
                if theta.size != dim * dim:
                    raise ConfigError("linear matrix must be %dx%d" % (dim, dim))
                _reject_unknown(params, {"matrix"}, "linear")
            else:
                raise ConfigError("linear params need 'a' (dim 1) or 'matrix'")
        return LinearMap(theta, dt=dt if dt is not None else 1.0, dim=dim)
    if system_id == "logistic":
        theta = [float(params.get("r", 4.0))] if params else None
        if params:
            _reject_unknown(params, {"r"}, "logistic")
        return LogisticMap(theta, dt=dt if dt is not None else 1.0)
    if system_id == "henon":
        theta = None
        if params:
            _reject_unknown(params, {"a", "b"}, "henon")
            theta = [float(params.get("a", 1.4)), float(params.get("b", 0.3))]
        return HenonMap(theta, dt=dt if dt is not None else 1.0)
    if system_id == "vanderpol":
        theta = None
        if params:
            _reject_unknown(params, {"mu"}, "vanderpol")
            theta = [float(params.get("mu", 2.0))]
        return VanDerPolMap(theta, dt=dt if dt is not None else 1e-3)
    if system_id == "manipulator2r":
        if params:
            _reject_unknown(params, {f.name for f in ManipulatorParams.__dataclass_fields__.values()}, "manipulator2r")
        return Manipulator2R(params, dt=dt if dt is not None else 1e-3)
    if system_id == "hopper1d":
        if params:
            _reject_unknown(params, {f.name for f in HopperParams.__dataclass_fields__.values()}, "hopper1d")
        return Hopper1D(params, dt=dt if dt is not None else 1e-3)
    raise ConfigError("unknown system id %r (known: %s)" % (system_id, ", ".join(SYSTEM_IDS)))


def _reject_unknown(params, allowed, system_id):
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(
            "unknown parameter key %r for system %r" % (sorted(unknown)[0], system_id)
        )
