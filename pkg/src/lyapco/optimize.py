"""Composite loss, Adam with bound projection, and the co-design loop.

The loss couples task terms (reach a target, hold a height, keep control
effort down) with the robustness metric: the signed exponent sum enters the
loss directly, so minimizing pushes the closed loop toward stronger
contraction.  Gradients default to central finite differences over the
(deterministic) pipeline; an exact forward-over-forward jet path is available
for cross-validation, exploiting that the exponent sum telescopes to an
average of per-step log|det dPhi| terms.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import jets
from .decomp import SINGULAR_VALUE_FLOOR
from .errors import (
    ConfigError,
    ContractViolationError,
    NumericalDomainError,
    OptimizationFailureError,
    SimulationBlowupError,
)
from .spectrum import rollout, spectrum_from_jacobians, trajectory_jacobians

TERM_KINDS = ("target_position", "forward_velocity", "base_height", "control_effort")

#: Loss assigned to a rollout that blew up; finite so FD probing survives.
BLOWUP_PENALTY = 1e6


@dataclass
class LossTerm:
    kind: str
    reference: object = None
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ConfigError(
                "unknown loss term kind %r (choose from %s)" % (self.kind, ", ".join(TERM_KINDS))
            )
        if self.weight < 0.0:
            raise ConfigError("loss term weights must be nonnegative")


@dataclass
class LossSpec:
    """Weighted task terms plus the robustness metric over an N-step rollout."""

    horizon: int
    terms: list = field(default_factory=list)
    weight_robustness: float = 0.0
    dt: float = None
    estimator: str = "qr_propagated"
    burn_in: int = 0
    units: str = "per_second"

    def __post_init__(self):
        self.terms = [t if isinstance(t, LossTerm) else LossTerm(**t) for t in self.terms]
        if self.horizon < 1:
            raise ConfigError("loss horizon must be >= 1")
        if self.weight_robustness < 0.0:
            raise ConfigError("weight_robustness must be nonnegative")
        if not self.terms and self.weight_robustness == 0.0:
            raise ConfigError("loss needs at least one active term")


def _term_value(tmap, term, traj_states, controls):
    if term.kind == "target_position":
        ref = np.asarray(term.reference, dtype=float)
        pos = jets.value_of(tmap.position(traj_states[-1]))
        delta = pos - ref
        return float(np.dot(delta, delta))
    if term.kind == "forward_velocity":
        vel = jets.value_of(tmap.velocity_scalar(traj_states))
        err = float(np.mean(vel)) - float(term.reference)
        return err * err
    if term.kind == "base_height":
        h = jets.value_of(tmap.height(traj_states))
        dev = h - float(term.reference)
        return float(np.mean(dev * dev))
    if term.kind == "control_effort":
        return float(np.mean(np.sum(controls * controls, axis=-1)))
    raise ConfigError("unknown loss term kind %r" % term.kind)


def eval_loss(tmap, theta, x0, loss, n_threads=1, floor=SINGULAR_VALUE_FLOOR):
    """Roll out, evaluate every term, and return (value, diagnostics).

    A blow-up is not fatal: the loss becomes a large finite penalty and the
    diagnostics carry the flag plus the failing step index.
    """
    theta = np.asarray(theta, dtype=float)
    if loss.dt is not None and loss.dt != tmap.dt:
        raise ConfigError(
            "loss dt %g disagrees with the map's dt %g" % (loss.dt, tmap.dt)
        )
    try:
        traj = rollout(tmap, x0, loss.horizon, theta=theta)
    except SimulationBlowupError as exc:
        # Graded sentinel: an earlier failure costs more, so finite
        # differences across the stability boundary still point back toward
        # the survivable region instead of flat-lining.
        penalty = BLOWUP_PENALTY * (2.0 - exc.step_index / float(loss.horizon))
        diag = {
            "blowup": True,
            "blowup_step": exc.step_index,
            "terms": {},
            "L_lambda": None,
            "lambda": None,
        }
        return penalty, diag
    controls = None
    if any(t.kind == "control_effort" for t in loss.terms):
        ctl = tmap.control(traj.states[:-1], t=traj.times()[:-1], theta=theta)
        controls = np.asarray(jets.value_of(ctl), dtype=float)
    term_values = {}
    total = 0.0
    for term in loss.terms:
        val = _term_value(tmap, term, traj.states, controls)
        term_values[term.kind] = val
        total += term.weight * val
    spec = None
    if loss.weight_robustness > 0.0:
        J = trajectory_jacobians(tmap.with_theta(theta), traj)
        spec = spectrum_from_jacobians(
            J,
            traj.dt,
            estimator=loss.estimator,
            burn_in=loss.burn_in,
            units=loss.units,
            n_threads=n_threads,
            trace_stride=max(1, loss.horizon),
            floor=floor,
        )
        total += loss.weight_robustness * spec.L_lambda
    diag = {
        "blowup": False,
        "terms": term_values,
        "L_lambda": spec.L_lambda if spec is not None else None,
        "lambda": spec.lam.tolist() if spec is not None else None,
    }
    return total, diag


@dataclass
class OptimizerState:
    """Adam moments plus per-parameter box bounds (projected after each step)."""

    theta: np.ndarray
    m: np.ndarray = None
    v: np.ndarray = None
    step: int = 0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).copy()
        p = self.theta.size
        self.m = np.zeros(p) if self.m is None else np.asarray(self.m, dtype=float)
        self.v = np.zeros(p) if self.v is None else np.asarray(self.v, dtype=float)
        self.lower = np.full(p, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(p, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if not (self.m.shape == self.v.shape == self.theta.shape):
            raise ContractViolationError("theta, m and v must share one shape")
        if np.any(self.lower > self.upper):
            raise ContractViolationError("lower bounds exceed upper bounds")
        self.theta = np.clip(self.theta, self.lower, self.upper)

    @property
    def frozen(self):
        return self.lower == self.upper


def adam_step(state, grad):
    """One bias-corrected Adam update followed by projection onto the bounds."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.theta.shape:
        raise ContractViolationError("gradient shape %s != theta shape %s" % (grad.shape, state.theta.shape))
    if not np.isfinite(grad).all():
        raise NumericalDomainError("gradient contains non-finite entries")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    theta = state.theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    theta = np.clip(theta, state.lower, state.upper)
    return OptimizerState(
        theta=theta,
        m=m,
        v=v,
        step=t,
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        lower=state.lower,
        upper=state.upper,
    )


@dataclass
class HistoryRecord:
    iteration: int
    loss: float
    L_lambda: float
    theta: np.ndarray
    diagnostics: dict


@dataclass
class CodesignResult:
    theta: np.ndarray
    best_loss: float
    history: list

    @property
    def losses(self):
        return np.array([h.loss for h in self.history])


def _bounded_fd_grad(loss_fn, state, fd_scale, n_threads):
    """Central differences with probes clamped to the bounds.

    The denominator is the actual probe separation, so a parameter sitting on
    a bound degrades gracefully to a one-sided difference.  Frozen parameters
    (lower == upper) get gradient zero without spending evaluations.
    """
    theta = state.theta
    frozen = state.frozen
    probes = []
    meta = []
    for j in range(theta.size):
        if frozen[j]:
            continue
        h = fd_scale * (1.0 + abs(theta[j]))
        hi = min(theta[j] + h, state.upper[j])
        lo = max(theta[j] - h, state.lower[j])
        if hi == lo:
            continue
        up = theta.copy()
        up[j] = hi
        dn = theta.copy()
        dn[j] = lo
        probes.extend([up, dn])
        meta.append((j, hi - lo))
    workers = max(1, min(int(n_threads), len(probes), os.cpu_count() or 1))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(loss_fn, probes))
    else:
        values = [loss_fn(p) for p in probes]
    grad = np.zeros_like(theta)
    for k, (j, span) in enumerate(meta):
        grad[j] = (values[2 * k] - values[2 * k + 1]) / span
    return grad


def _nested_grad(tmap, theta, x0, loss, free_mask):
    """Exact gradient by forward-over-forward jets (slow, for cross-checks)."""
    total, _ = _eval_loss_jets(tmap, theta, x0, loss, free_mask)
    grad = np.zeros(theta.size)
    grad[free_mask] = np.asarray(jets.value_of(total.tang), dtype=float)
    return grad


def _eval_loss_jets(tmap, theta, x0, loss, free_mask):
    """Loss evaluated with theta seeded as a jet over its free components.

    The robustness term is accumulated as per-step log|det dPhi| (the exponent
    sum telescopes to exactly that), differentiated through an inner jet level
    seeded over the state.
    """
    k = int(free_mask.sum())
    seeds = np.zeros((theta.size, k))
    seeds[np.flatnonzero(free_mask), np.arange(k)] = 1.0
    th = jets.Jet(np.asarray(theta, dtype=float), seeds)
    x = jets.Jet(np.asarray(x0, dtype=float), np.zeros((x0.size, k)))
    dt = tmap.dt
    states = [x]
    logdet_sum = None
    t = 0.0
    d = tmap.state_dim
    # Both arguments must be lifted to the inner level: a theta-jet left bare
    # would be mistaken for an inner-level perturbation.
    th_inner = jets.Jet(th, np.zeros((theta.size, d)))
    for i in range(loss.horizon):
        if loss.weight_robustness > 0.0 and i >= loss.burn_in:
            inner = jets.Jet(x, np.eye(d))
            y_inner = tmap.step_math(inner, th_inner, t)
            jac = y_inner.tang  # (d, d), theta-jet valued
            term = jets.logabsdet_small(jac)
            logdet_sum = term if logdet_sum is None else logdet_sum + term
            x = y_inner.value
        else:
            x = tmap.step_math(x, th, t)
        states.append(x)
        t += dt
    total = None

    def add(term):
        nonlocal total
        total = term if total is None else total + term

    for term in loss.terms:
        if term.kind == "target_position":
            ref = np.asarray(term.reference, dtype=float)
            pos = tmap.position(states[-1])
            acc = None
            for c in range(ref.size):
                dcomp = pos[..., c] - ref[c]
                sq = dcomp * dcomp
                acc = sq if acc is None else acc + sq
            add(term.weight * acc)
        elif term.kind == "forward_velocity":
            vels = [tmap.velocity_scalar(s) for s in states]
            mean_v = vels[0]
            for v in vels[1:]:
                mean_v = mean_v + v
            mean_v = mean_v / float(len(vels))
            err = mean_v - float(term.reference)
            add(term.weight * (err * err))
        elif term.kind == "base_height":
            acc = None
            for s in states:
                dev = tmap.height(s) - float(term.reference)
                sq = dev * dev
                acc = sq if acc is None else acc + sq
            add(term.weight * (acc / float(len(states))))
        elif term.kind == "control_effort":
            acc = None
            tcur = 0.0
            for s in states[:-1]:
                u = tmap.control(s, t=tcur, theta=th)
                sq = u[..., 0] * u[..., 0] + u[..., 1] * u[..., 1]
                acc = sq if acc is None else acc + sq
                tcur += dt
            add(term.weight * (acc / float(loss.horizon)))
    if loss.weight_robustness > 0.0:
        counted = loss.horizon - loss.burn_in
        unit_dt = dt if loss.units == "per_second" else 1.0
        add(loss.weight_robustness * (logdet_sum / (unit_dt * counted)))
    return total, states


def codesign(
    tmap,
    theta0,
    x0,
    loss,
    iters,
    grad_method="fd_central",
    lr=1e-2,
    beta1=0.9,
    beta2=0.999,
    eps=1e-8,
    lower=None,
    upper=None,
    fd_scale=1e-5,
    n_threads=1,
    normalize_steps=False,
    loss_fn=None,
):
    """Adam loop over hardware and policy parameters; returns best-so-far.

    With ``normalize_steps`` the loop optimizes box-normalized coordinates
    (each finite [lower, upper] interval mapped to [0, 1]), so one learning
    rate moves gains, masses and lengths by comparable fractions of their
    allowed ranges.  ``loss_fn`` may override the default rollout loss (handy
    for tests); it must map a parameter vector to a float.
    """
    if iters < 0:
        raise ContractViolationError("iters must be >= 0")
    if grad_method not in ("fd_central", "nested_jets"):
        raise ContractViolationError("grad_method must be fd_central or nested_jets")
    theta0 = np.asarray(theta0, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    p = theta0.size
    lower = np.full(p, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(p, np.inf) if upper is None else np.asarray(upper, dtype=float)
    if normalize_steps:
        with np.errstate(invalid="ignore"):
            width = upper - lower
        boxed = np.isfinite(width) & (width > 0.0)
        scale = np.where(boxed, width, 1.0)
        offset = np.where(boxed, lower, 0.0)
    else:
        scale = np.ones(p)
        offset = np.zeros(p)

    def to_theta(y):
        return offset + scale * y

    def to_y(theta):
        return (theta - offset) / scale

    state = OptimizerState(
        theta=to_y(theta0),
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        lower=to_y(lower),
        upper=to_y(upper),
    )

    diag_cache = {}

    def full_eval(theta):
        val, diag = eval_loss(tmap, theta, x0, loss, n_threads=1)
        diag_cache["last"] = diag
        return val

    if loss_fn is None:
        theta_loss = full_eval
    else:
        theta_loss = lambda th: float(loss_fn(th))  # noqa: E731

    def y_loss(y):
        return theta_loss(to_theta(y))

    history = []

    def record(it, y):
        theta = to_theta(y)
        val = theta_loss(theta)
        diag = diag_cache.pop("last", {})
        history.append(
            HistoryRecord(
                iteration=it,
                loss=val,
                L_lambda=diag.get("L_lambda") if diag else None,
                theta=theta.copy(),
                diagnostics=diag,
            )
        )
        return val

    best_loss = record(0, state.theta)
    best_theta = to_theta(state.theta).copy()
    for it in range(1, iters + 1):
        if grad_method == "fd_central":
            grad = _bounded_fd_grad(y_loss, state, fd_scale, n_threads)
        else:
            grad = _nested_grad(tmap, to_theta(state.theta), x0, loss, ~state.frozen) * scale
        state = adam_step(state, grad)
        val = record(it, state.theta)
        if val < best_loss:
            best_loss = val
            best_theta = to_theta(state.theta).copy()
    blowups = [h for h in history if h.diagnostics.get("blowup")]
    if loss_fn is None and len(blowups) == len(history):
        raise OptimizationFailureError("every iterate blew up during co-design", history=history)
    return CodesignResult(theta=best_theta, best_loss=best_loss, history=history)
