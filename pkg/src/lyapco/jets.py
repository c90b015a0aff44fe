"""Forward-mode automatic differentiation ("jets") and finite-difference oracles.

A :class:`Jet` carries a value array of semantic shape ``S`` together with a
tangent array of shape ``S + (k,)`` holding directional derivatives along
``k`` seed directions.  Arithmetic on jets applies the chain rule exactly, so
seeding the ``k = d`` canonical directions of a ``d``-dimensional input and
pushing it through a transition map yields the exact Jacobian of one step.

Two properties of the representation are load-bearing elsewhere:

* every operation is written with trailing-axis broadcasting only, so the
  value array may carry arbitrary leading batch axes -- one call evaluates
  the Jacobians of a whole trajectory at once;
* the ``value`` and ``tang`` slots may themselves hold jets, which gives
  forward-over-forward second derivatives (used by the exact gradient path
  of the co-design loop) without any extra machinery.

Derivatives at the kinks of piecewise functions (``where``, ``maximum``,
``absolute``) follow the selected branch; the transition maps only use these
for C^1 constructions where the branches agree to first order.
"""

import numpy as np

from .errors import ContractViolationError, NumericalDomainError

DEFAULT_FD_SCALE = 1e-5


def value_of(x):
    """Strip all jet levels, returning the underlying float array."""
    while isinstance(x, Jet):
        x = x.value
    return np.asarray(x)


def shape_of(x):
    """Semantic shape of a jet or array (tangent axes not counted)."""
    if isinstance(x, Jet):
        return shape_of(x.value)
    return np.shape(x)


def _expand(v):
    """Append a broadcast axis so a value multiplies a tangent cleanly."""
    if isinstance(v, Jet):
        return v[..., None]
    return np.asarray(v)[..., None]


class Jet:
    __slots__ = ("value", "tang")

    # Make ndarray <op> Jet defer to our reflected methods.
    __array_ufunc__ = None

    def __init__(self, value, tang):
        self.value = value
        self.tang = tang

    @property
    def shape(self):
        return shape_of(self.value)

    @property
    def n_directions(self):
        if isinstance(self.tang, Jet):
            return self.tang.shape[-1]
        return np.shape(self.tang)[-1]

    def __repr__(self):
        return "Jet(value=%r, tang=%r)" % (self.value, self.tang)

    # -- indexing ----------------------------------------------------------
    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.value[idx], self.tang[idx + (slice(None),)])

    # -- arithmetic --------------------------------------------------------
    def __neg__(self):
        return Jet(-self.value, -self.tang)

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.value + other.value, self.tang + other.tang)
        return Jet(self.value + other, self.tang)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Jet):
            return Jet(self.value - other.value, self.tang - other.tang)
        return Jet(self.value - other, self.tang)

    def __rsub__(self, other):
        return Jet(other - self.value, -self.tang)

    def __mul__(self, other):
        if isinstance(other, Jet):
            return Jet(
                self.value * other.value,
                _expand(self.value) * other.tang + _expand(other.value) * self.tang,
            )
        return Jet(self.value * other, self.tang * _expand(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            q = self.value / other.value
            return Jet(q, (self.tang - _expand(q) * other.tang) / _expand(other.value))
        return Jet(self.value / other, self.tang / _expand(other))

    def __rtruediv__(self, other):
        q = other / self.value
        return Jet(q, -_expand(q / self.value) * self.tang)

    def __pow__(self, n):
        if isinstance(n, Jet):
            raise ContractViolationError("jet exponents are not supported")
        return Jet(self.value**n, _expand(n * self.value ** (n - 1)) * self.tang)

    # -- comparisons (on deep values; used for branch selection only) -------
    def __lt__(self, other):
        return value_of(self) < value_of(other)

    def __le__(self, other):
        return value_of(self) <= value_of(other)

    def __gt__(self, other):
        return value_of(self) > value_of(other)

    def __ge__(self, other):
        return value_of(self) >= value_of(other)


def _promote(x, template):
    """Lift a constant to a zero-tangent jet matching ``template``'s seeds."""
    if isinstance(x, Jet):
        return x
    x = np.asarray(x, dtype=float)
    return Jet(x, np.zeros(x.shape + (template.n_directions,)))


# -- elementwise functions (dispatch on jets, recurse for nesting) ----------


def sin(x):
    if isinstance(x, Jet):
        return Jet(sin(x.value), _expand(cos(x.value)) * x.tang)
    return np.sin(x)


def cos(x):
    if isinstance(x, Jet):
        return Jet(cos(x.value), -_expand(sin(x.value)) * x.tang)
    return np.cos(x)


def exp(x):
    if isinstance(x, Jet):
        e = exp(x.value)
        return Jet(e, _expand(e) * x.tang)
    return np.exp(x)


def log(x):
    if isinstance(x, Jet):
        return Jet(log(x.value), x.tang / _expand(x.value))
    return np.log(x)


def sqrt(x):
    if isinstance(x, Jet):
        r = sqrt(x.value)
        return Jet(r, x.tang / _expand(2.0 * r))
    return np.sqrt(x)


def absolute(x):
    if isinstance(x, Jet):
        s = np.sign(value_of(x))
        return Jet(absolute(x.value), _expand(s) * x.tang)
    return np.abs(x)


def where(cond, a, b):
    cond = np.asarray(cond)
    if isinstance(a, Jet) or isinstance(b, Jet):
        ref = a if isinstance(a, Jet) else b
        a = _promote(a, ref)
        b = _promote(b, ref)
        return Jet(where(cond, a.value, b.value), where(cond[..., None], a.tang, b.tang))
    return np.where(cond, a, b)


def maximum(a, b):
    return where(value_of(a) >= value_of(b), a, b)


def minimum(a, b):
    return where(value_of(a) <= value_of(b), a, b)


def stack_last(parts):
    """Stack scalar components along a new trailing semantic axis."""
    return _stack(parts, axis=-1)


def _stack(parts, axis):
    if any(isinstance(p, Jet) for p in parts):
        ref = next(p for p in parts if isinstance(p, Jet))
        parts = [_promote(p, ref) for p in parts]
        return Jet(
            _stack([p.value for p in parts], axis),
            _stack([p.tang for p in parts], axis - 1),
        )
    return np.stack([np.asarray(p, dtype=float) for p in parts], axis=axis)


# -- seeding and extraction --------------------------------------------------


def seed_identity(x):
    """Seed a state (``(d,)`` or batched ``(..., d)``) with canonical directions.

    With ``k = d`` identity seeding, pushing the jet through a map and reading
    the tangents back gives the full Jacobian, one row per output component.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    eye = np.broadcast_to(np.eye(d), x.shape + (d,))
    return Jet(x, eye)


def extract_tangents(y):
    """Materialize a first-level jet's tangents as a plain float array."""
    if not isinstance(y, Jet):
        raise ContractViolationError("expected a Jet, got %r" % type(y).__name__)
    k = y.n_directions
    return np.array(np.broadcast_to(y.tang, shape_of(y.value) + (k,)), dtype=float)


class JacobianMatrix:
    """Dense Jacobian with the base point it was evaluated at."""

    __slots__ = ("entries", "base_point")

    def __init__(self, entries, base_point):
        self.entries = np.asarray(entries, dtype=float)
        self.base_point = np.asarray(base_point, dtype=float)

    def __repr__(self):
        return "JacobianMatrix(entries=%r)" % (self.entries,)


def _check_finite(mat, what):
    bad = ~np.isfinite(mat)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NumericalDomainError(
            "%s has non-finite entry at %s (value %r)" % (what, idx, mat[idx])
        )


def jacobian_state(tmap, x, theta=None, t=0.0):
    """Exact Jacobian of one step with respect to the state, by jet push-through."""
    x = np.asarray(x, dtype=float)
    theta = tmap.theta if theta is None else np.asarray(theta, dtype=float)
    if x.shape != (tmap.state_dim,):
        raise ContractViolationError(
            "state for %s must have shape (%d,), got %s"
            % (tmap.system_id, tmap.state_dim, x.shape)
        )
    if theta.shape != (len(tmap.param_names),):
        raise ContractViolationError(
            "theta for %s must have shape (%d,), got %s"
            % (tmap.system_id, len(tmap.param_names), theta.shape)
        )
    y = tmap.step_math(seed_identity(x), theta, t)
    entries = extract_tangents(y)
    _check_finite(entries, "state Jacobian of %s at %s" % (tmap.system_id, x))
    return JacobianMatrix(entries, x)


def jacobian_params(tmap, x, theta=None, t=0.0):
    """Exact Jacobian of one step with respect to the parameter vector.

    Columns follow the map's canonical parameter order (``tmap.param_names``).
    """
    x = np.asarray(x, dtype=float)
    theta = tmap.theta if theta is None else np.asarray(theta, dtype=float)
    if x.shape != (tmap.state_dim,):
        raise ContractViolationError(
            "state for %s must have shape (%d,), got %s"
            % (tmap.system_id, tmap.state_dim, x.shape)
        )
    if theta.shape != (len(tmap.param_names),):
        raise ContractViolationError(
            "theta for %s must have shape (%d,), got %s"
            % (tmap.system_id, len(tmap.param_names), theta.shape)
        )
    y = tmap.step_math(x, seed_identity(theta), t)
    entries = extract_tangents(y)
    _check_finite(entries, "parameter Jacobian of %s at %s" % (tmap.system_id, x))
    return JacobianMatrix(entries, x)


# -- finite-difference oracles -----------------------------------------------


def _fd_steps(x, h):
    x = np.asarray(x, dtype=float)
    if h is None:
        return DEFAULT_FD_SCALE * (1.0 + np.abs(x))
    h = float(h)
    if h <= 0.0:
        raise ContractViolationError("finite-difference step must be positive")
    return np.full(x.shape, h)


def finite_diff_jacobian(f, x, h=None):
    """Central-difference Jacobian, one column per perturbed input component.

    The default step is ``1e-5 * (1 + |x_j|)`` per component.
    """
    x = np.asarray(x, dtype=float)
    steps = _fd_steps(x, h)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = steps[j]
        hi = np.asarray(f(x + e), dtype=float)
        lo = np.asarray(f(x - e), dtype=float)
        if not (np.isfinite(hi).all() and np.isfinite(lo).all()):
            raise NumericalDomainError(
                "function returned non-finite values near x[%d] +/- %g" % (j, steps[j])
            )
        cols.append((hi - lo) / (2.0 * steps[j]))
    return JacobianMatrix(np.stack(cols, axis=-1), x)


def grad_scalar_fd(loss, theta, h=None):
    """Central-difference gradient of a scalar loss over a parameter vector."""
    theta = np.asarray(theta, dtype=float)
    steps = _fd_steps(theta, h)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = steps[j]
        hi = float(loss(theta + e))
        lo = float(loss(theta - e))
        if not np.isfinite(hi):
            raise NumericalDomainError("loss non-finite at probe theta[%d] + %g" % (j, steps[j]))
        if not np.isfinite(lo):
            raise NumericalDomainError("loss non-finite at probe theta[%d] - %g" % (j, steps[j]))
        grad[j] = (hi - lo) / (2.0 * steps[j])
    return grad


def logabsdet_small(mat):
    """log|det| of a small square matrix by pivoted elimination, jet-friendly.

    Works on plain arrays and on (possibly nested) jet matrices; pivoting
    decisions are made on deep values, so derivatives follow the selected
    pivot sequence.  Used by the exact-gradient path, where the robustness
    metric reduces to a sum of per-step log|det| terms.
    """
    d = shape_of(mat)[0]
    rows = [[mat[i, j] for j in range(d)] for i in range(d)]
    total = None
    for col in range(d):
        piv = max(range(col, d), key=lambda r: abs(float(value_of(rows[r][col]))))
        if piv != col:
            rows[col], rows[piv] = rows[piv], rows[col]
        pivot = rows[col][col]
        term = log(absolute(pivot))
        total = term if total is None else total + term
        for r in range(col + 1, d):
            factor = rows[r][col] / pivot
            for c in range(col + 1, d):
                rows[r][c] = rows[r][c] - factor * rows[col][c]
    return total
