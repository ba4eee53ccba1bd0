"""Plant, observation and controller definitions.

The plant is ``x' = A x + B u`` with a nonlinear output ``y = h(x)``.  The
augmented controller scales the LQR feedback by ``R^-1 + S(x)`` where ``S`` is
diagonal with entries

    S_ii(x) = k1_i exp(-k2_i / |x|) sin^2(k3_i |x| + k4_i)

and ``S(0) = 0`` by continuity.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from obsyn.errors import DomainViolation
from obsyn.linalg import as_matrix, is_spd

HALF_PI = 0.5 * np.pi


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if B.shape[0] != A.shape[0]:
            raise ValueError("B must have as many rows as A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]


# ---------------------------------------------------------------------------
# observations


@dataclass(frozen=True)
class ObservationModel:
    """Output map ``h``.

    ``evaluate`` (and ``jacobian`` / ``domain_guard`` when given) must accept a
    stack of states of shape ``(..., n)`` if ``vectorized`` is set; otherwise
    they are called one state at a time.
    """

    name: str
    output_dim: int
    evaluate: Callable
    jacobian: Optional[Callable] = None
    domain_guard: Optional[Callable] = None
    vectorized: bool = False
    params: dict = field(default_factory=dict)


def _rowwise(fn, X, out_ndim):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return np.asarray(fn(X), dtype=float)
    flat = X.reshape(-1, X.shape[-1])
    vals = np.array([np.asarray(fn(x), dtype=float) for x in flat])
    return vals.reshape(X.shape[:-1] + vals.shape[1 : 1 + out_ndim])


def in_domain(h, X):
    """Boolean mask over the leading axes of ``X``."""
    X = np.asarray(X, dtype=float)
    if h.domain_guard is None:
        return np.ones(X.shape[:-1], dtype=bool)
    if h.vectorized:
        return np.asarray(h.domain_guard(X), dtype=bool)
    if X.ndim == 1:
        return np.asarray(bool(h.domain_guard(X)))
    flat = X.reshape(-1, X.shape[-1])
    return np.array([bool(h.domain_guard(x)) for x in flat]).reshape(X.shape[:-1])


def observe(h, X):
    """Evaluate ``h`` on a state or a stack of states, guarding the domain."""
    X = np.asarray(X, dtype=float)
    ok = in_domain(h, X)
    if not np.all(ok):
        raise DomainViolation(message=f"{h.name} undefined at {X[~ok][0] if X.ndim > 1 else X}")
    if h.vectorized:
        return np.asarray(h.evaluate(X), dtype=float)
    return _rowwise(h.evaluate, X, 1)


def fd_jacobian(h, x):
    """Central-difference Jacobian, step ``1e-6 max(1, |x|)``."""
    x = np.asarray(x, dtype=float)
    step = 1e-6 * max(1.0, np.linalg.norm(x))
    n = x.size
    J = np.empty((h.output_dim, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        J[:, j] = (observe(h, x + e) - observe(h, x - e)) / (2 * step)
    return J


def observation_jacobian(h, X):
    """Jacobian of ``h``: analytic when provided, finite differences otherwise.

    ``X`` may be a single state (returns ``m x n``) or a stack ``(..., n)``
    (returns ``(..., m, n)``).
    """
    X = np.asarray(X, dtype=float)
    ok = in_domain(h, X)
    if not np.all(ok):
        raise DomainViolation(message=f"{h.name} Jacobian undefined outside its domain")
    if h.jacobian is not None:
        if h.vectorized:
            return np.asarray(h.jacobian(X), dtype=float)
        return _rowwise(h.jacobian, X, 2)
    return _rowwise(lambda x: fd_jacobian(h, x), X, 2)


def bearing_ratio():
    """``y = x2 / x1`` (planar bearing-only sensor at the origin)."""

    def evaluate(X):
        return X[..., 1:2] / X[..., 0:1]

    def jacobian(X):
        J = np.zeros(X.shape[:-1] + (1, X.shape[-1]))
        J[..., 0, 0] = -X[..., 1] / X[..., 0] ** 2
        J[..., 0, 1] = 1.0 / X[..., 0]
        return J

    def guard(X):
        scale = np.maximum(1.0, np.linalg.norm(X, axis=-1))
        return np.abs(X[..., 0]) > 1e-9 * scale

    return ObservationModel("bearing_ratio", 1, evaluate, jacobian, guard, vectorized=True)


def relative_bearing(n, reference=0):
    """``y_j = x_j / x_ref`` for every ``j != ref``."""
    others = [j for j in range(n) if j != reference]

    def evaluate(X):
        return X[..., others] / X[..., reference : reference + 1]

    def jacobian(X):
        xr = X[..., reference]
        J = np.zeros(X.shape[:-1] + (len(others), n))
        for row, j in enumerate(others):
            J[..., row, j] = 1.0 / xr
            J[..., row, reference] = -X[..., j] / xr**2
        return J

    def guard(X):
        scale = np.maximum(1.0, np.linalg.norm(X, axis=-1))
        return np.abs(X[..., reference]) > 1e-9 * scale

    return ObservationModel(
        "relative_bearing", n - 1, evaluate, jacobian, guard, vectorized=True,
        params={"reference": reference},
    )


def linear_observation(C):
    C = as_matrix(C, "C")

    def evaluate(X):
        return X @ C.T

    def jacobian(X):
        return np.broadcast_to(C, X.shape[:-1] + C.shape).copy()

    return ObservationModel("linear", C.shape[0], evaluate, jacobian, None, vectorized=True,
                            params={"C": C})


def make_observation(kind, n, params=None):
    """Catalog lookup: ``bearing_ratio``, ``relative_bearing`` or ``linear``."""
    params = params or {}
    if kind == "bearing_ratio":
        if n < 2:
            raise ValueError("bearing_ratio needs n >= 2")
        return bearing_ratio()
    if kind == "relative_bearing":
        return relative_bearing(n, int(params.get("reference", 0)))
    if kind == "linear":
        if "C" not in params:
            raise ValueError("linear observation needs params.C")
        C = as_matrix(params["C"], "C")
        if C.shape[1] != n:
            raise ValueError(f"C has {C.shape[1]} columns, expected {n}")
        return linear_observation(C)
    raise ValueError(f"unknown observation type {kind!r}")


# ---------------------------------------------------------------------------
# gains and controllers


@dataclass(frozen=True)
class AugmentedGains:
    """Per-channel parameters of the oscillatory gain schedule ``S(x)``."""

    k1: np.ndarray
    k2: np.ndarray
    k3: np.ndarray
    k4: np.ndarray

    def __post_init__(self):
        arrays = [np.atleast_1d(np.asarray(getattr(self, k), dtype=float)).copy()
                  for k in ("k1", "k2", "k3", "k4")]
        p = arrays[0].size
        if any(a.ndim != 1 or a.size != p for a in arrays):
            raise ValueError("k1..k4 must be vectors of equal length")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("gains must be finite")
        k1, k2, _, k4 = arrays
        if np.any(k1 < 0):
            raise ValueError("k1 must be nonnegative")
        if np.any(k2 <= 0):
            raise ValueError("k2 must be positive")
        if np.any(k4 < 0) or np.any(k4 >= HALF_PI):
            raise ValueError("k4 must lie in [0, pi/2)")
        for name, a in zip(("k1", "k2", "k3", "k4"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def p(self):
        return self.k1.size

    @classmethod
    def uniform(cls, p, k1, k2, k3, k4):
        return cls(*(np.full(p, float(v)) for v in (k1, k2, k3, k4)))

    @classmethod
    def from_vector(cls, theta):
        theta = np.asarray(theta, dtype=float)
        return cls(*np.split(theta, 4))

    def as_vector(self):
        return np.concatenate([self.k1, self.k2, self.k3, self.k4])


def s_values(gains, r):
    """Diagonal of ``S`` at norms ``r`` (any shape); returns ``r.shape + (p,)``."""
    r = np.asarray(r, dtype=float)[..., None]
    safe = np.where(r > 0, r, 1.0)
    decay = np.where(r > 0, np.exp(-gains.k2 / safe), 0.0)
    return gains.k1 * decay * np.sin(gains.k3 * r + gains.k4) ** 2


def s_derivatives(gains, r):
    """``S`` diagonal with its partials in ``|x|`` and in each gain vector.

    Returns ``(s, ds_dr, (ds_dk1, ds_dk2, ds_dk3, ds_dk4))``, every array of
    shape ``r.shape + (p,)``.  All derivatives vanish at ``r = 0``, where the
    factor ``exp(-k2/r)`` is flat.
    """
    r = np.asarray(r, dtype=float)[..., None]
    pos = r > 0
    safe = np.where(pos, r, 1.0)
    decay = np.where(pos, np.exp(-gains.k2 / safe), 0.0)
    theta = gains.k3 * r + gains.k4
    sin2 = np.sin(theta) ** 2
    sin_2theta = np.sin(2.0 * theta)
    s = gains.k1 * decay * sin2
    ds_dr = gains.k1 * decay * (gains.k2 / safe**2 * sin2 + gains.k3 * sin_2theta)
    d_k1 = decay * sin2
    d_k2 = -gains.k1 * decay * sin2 / safe
    d_k3 = gains.k1 * decay * sin_2theta * r
    d_k4 = gains.k1 * decay * sin_2theta
    return s, ds_dr, (d_k1, d_k2, d_k3, d_k4)


def s_matrix(gains, x):
    """``S(x)`` as a ``p x p`` diagonal matrix."""
    return np.diag(s_values(gains, np.linalg.norm(np.asarray(x, dtype=float))))


@dataclass(frozen=True)
class Controller:
    """LQR feedback, optionally augmented with the oscillatory schedule."""

    B: np.ndarray
    P: np.ndarray
    R: np.ndarray
    gains: Optional[AugmentedGains] = None

    def __post_init__(self):
        B = as_matrix(self.B, "B")
        P = as_matrix(self.P, "P")
        R = as_matrix(self.R, "R")
        if not is_spd(P, tol=1e-9) or not is_spd(R):
            raise ValueError("P and R must be symmetric positive definite")
        if self.gains is not None and self.gains.p != B.shape[1]:
            raise ValueError("gain vectors must have one entry per input channel")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "_G", B.T @ P)
        object.__setattr__(self, "_Rinv", np.linalg.inv(R))

    @classmethod
    def lqr(cls, B, P, R):
        return cls(B, P, R)

    @classmethod
    def augmented(cls, B, P, R, gains):
        return cls(B, P, R, gains)

    @property
    def variant(self):
        return "LQR" if self.gains is None else "Augmented"

    @property
    def feedback(self):
        """``B^T P``."""
        return self._G

    @property
    def R_inv(self):
        return self._Rinv

    def with_gains(self, gains):
        return Controller(self.B, self.P, self.R, gains)


def control(ctrl, x):
    """``u = -[R^-1 + S(x)] B^T P x`` (``S = 0`` for the LQR variant).

    Accepts a single state or a stack ``(..., n)``.
    """
    x = np.asarray(x, dtype=float)
    v = x @ ctrl.feedback.T
    u = -(v @ ctrl.R_inv.T)
    if ctrl.gains is not None:
        u = u - s_values(ctrl.gains, np.linalg.norm(x, axis=-1)) * v
    return u


def control_jacobian(ctrl, x):
    """``du/dx`` at a single state (``p x n``)."""
    x = np.asarray(x, dtype=float)
    G = ctrl.feedback
    J = -ctrl.R_inv @ G
    if ctrl.gains is None:
        return J
    r = np.linalg.norm(x)
    s, ds_dr, _ = s_derivatives(ctrl.gains, r)
    v = G @ x
    J = J - s[:, None] * G
    if r > 0:
        J = J - np.outer(v * ds_dr, x / r)
    return J


def closed_loop_field(system, ctrl):
    """Vector field ``x -> A x + B u(x)``; accepts stacked states."""
    A, B = system.A, system.B

    def field(x):
        # row form so a stack of states (..., n) goes through unchanged
        return x @ A.T + control(ctrl, x) @ B.T

    return field


def closed_loop_matrix(system, ctrl):
    """``A - B R^-1 B^T P`` (the baseline LQR closed loop)."""
    return system.A - system.B @ ctrl.R_inv @ ctrl.feedback


def lyapunov_rate(P, Q, R, B, S, x):
    """``V = x'Px`` and its derivative along the augmented closed loop."""
    x = np.asarray(x, dtype=float)
    P, Q, R, B, S = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (P, Q, R, B, S))
    PB = P @ B
    M = -Q - PB @ np.linalg.solve(R, PB.T) - 2.0 * PB @ S @ PB.T
    return float(x @ P @ x), float(x @ M @ x)
