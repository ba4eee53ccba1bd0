"""Observability-weighted gain synthesis for the augmented controller.

The cost of a gain vector ``k = (k1, k2, k3, k4)`` is

    J(k) = int_0^tf  Gamma dt,
    Gamma = x'(P B (R^-1 + 2S + S R S) B' P + Q) x - w l2,

with ``l2`` the discounted output-difference energy of the ``2n`` perturbed
trajectories.  ``J`` is carried as one extra state next to the ``2n+1``
stacked trajectories and the whole augmented system is integrated with RK4.
Differentiating the RK4 stages gives RK4 applied to the sensitivity equations
``Xk' = dH/dx Xk + dH/dk``, so the returned gradient is the exact derivative
of the discretized cost.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from obsyn.errors import (
    DegenerateObservation,
    DomainViolation,
    LineSearchStalled,
    MonitorDiverged,
    NonFiniteState,
    ZeroInitialState,
)
from obsyn.linalg import estimate_decay_envelope, solve_care
from obsyn.model import (
    HALF_PI,
    AugmentedGains,
    Controller,
    closed_loop_matrix,
    in_domain,
    observation_jacobian,
    observe,
    s_derivatives,
    s_values,
)
from obsyn.obsgram import CostWeights
from obsyn.sim import SimGrid, default_epsilon, default_horizon, simulate_bundle

LIPSCHITZ_SAFETY = 1.2
MONITOR_ROUNDS = 20
K2_FLOOR = 1e-6
K4_CEIL = HALF_PI - 1e-9


@dataclass(frozen=True)
class CostBreakdown:
    J: float
    l1_integral: float
    l2_integral: float
    positivity_margin: float
    margin_trace: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)

    @property
    def first_violation_time(self):
        bad = np.flatnonzero(self.margin_trace < 0)
        return None if bad.size == 0 else float(self.times[bad[0]])


@dataclass(frozen=True)
class WeightSelection:
    w: float
    alpha: float
    L: float
    envelope: object
    update_count: int = 0

    def as_weights(self):
        return CostWeights(self.w, self.alpha)


@dataclass(frozen=True)
class SynthesisProblem:
    """Everything the cost depends on except the gains and the weights."""

    system: object
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    h: object
    x0: np.ndarray
    epsilon: float
    grid: SimGrid

    @classmethod
    def build(cls, system, Q, R, h, x0, epsilon=None, grid=None, dt=None):
        """Solve the Riccati equation and fill in default epsilon and horizon."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        R = np.atleast_2d(np.asarray(R, dtype=float))
        x0 = np.asarray(x0, dtype=float)
        care = solve_care(system.A, system.B, Q, R)
        if grid is None:
            Abar = closed_loop_matrix(system, Controller.lqr(system.B, care.P, R))
            a = 0.9 * abs(float(np.max(np.linalg.eigvals(Abar).real)))
            grid = SimGrid.make(default_horizon(a), dt)
        if epsilon is None:
            epsilon = default_epsilon(x0)
        return cls(system, Q, R, care.P, h, x0, float(epsilon), grid)

    @property
    def n(self):
        return self.system.n

    @property
    def p(self):
        return self.system.p

    def lqr(self):
        return Controller.lqr(self.system.B, self.P, self.R)

    def controller(self, gains):
        return Controller.augmented(self.system.B, self.P, self.R, gains)

    def bundle(self, gains=None):
        ctrl = self.lqr() if gains is None else self.controller(gains)
        return simulate_bundle(self.system, ctrl, self.x0, self.epsilon, self.grid)


# ---------------------------------------------------------------------------
# integrand


def gamma_at(x, perturbed_states, h, P, B, Q, R, gains, weights, t, epsilon):
    """Running cost ``Gamma`` at one instant, or at a stack of instants.

    ``perturbed_states`` stacks ``x+1..x+n`` followed by ``x-1..x-n`` along
    its second-to-last axis.  With ``x`` of shape ``(T, n)``, pass
    ``perturbed_states`` as ``(T, 2n, n)`` and ``t`` as ``(T,)``.
    """
    x = np.asarray(x, dtype=float)
    R = np.atleast_2d(R)
    p = np.shape(B)[1]
    s = s_values(gains, np.linalg.norm(x, axis=-1)) if gains is not None else np.zeros(x.shape[:-1] + (p,))
    # R^-1 + 2S + S R S with S = diag(s)
    mid = np.linalg.inv(R) + 2.0 * s[..., None] * np.eye(p) + s[..., :, None] * R * s[..., None, :]
    v = x @ (P @ B)
    quad = np.einsum("...i,ij,...j->...", x, Q, x) + np.einsum("...i,...ij,...j->...", v, mid, v)
    l2 = _l2_value(perturbed_states, h, weights.alpha, t, epsilon)
    out = quad - weights.w * l2
    return float(out) if np.ndim(out) == 0 else out


def _l2_value(perturbed_states, h, alpha, t, epsilon):
    Xp = np.asarray(perturbed_states, dtype=float)
    n = Xp.shape[-2] // 2
    Y = observe(h, Xp)
    D = Y[..., :n, :] - Y[..., n:, :]
    return np.exp(-alpha * np.asarray(t)) * np.sum(D**2, axis=(-2, -1)) / (4.0 * epsilon**2)


class _Augmented:
    """Right-hand side of the stacked system and of its sensitivities."""

    def __init__(self, problem, gains, weights):
        sysm = problem.system
        self.A = sysm.A
        self.B = sysm.B
        self.Q = problem.Q
        self.R = problem.R
        self.G = sysm.B.T @ problem.P
        self.Rinv = np.linalg.inv(problem.R)
        self.base = self.A - self.B @ self.Rinv @ self.G
        self.h = problem.h
        self.n = sysm.n
        self.p = sysm.p
        self.gains = gains
        self.w = float(weights.w)
        self.alpha = float(weights.alpha)
        self.c_eps = 1.0 / (4.0 * problem.epsilon**2)

    def _observe(self, Xp, t):
        ok = in_domain(self.h, Xp)
        if not np.all(ok):
            raise DomainViolation(t=float(t), member=1 + int(np.argmin(ok)))
        return observe(self.h, Xp)

    def rhs(self, t, X, Z=None):
        """Return ``(Xdot, gamma, l1, l2, Zdot, zJdot)``; sensitivities when ``Z`` given."""
        n = self.n
        r = np.linalg.norm(X, axis=1)
        s, ds_dr, dks = s_derivatives(self.gains, r)
        V = X @ self.G.T
        U = -(V @ self.Rinv.T) - s * V
        Xdot = X @ self.A.T + U @ self.B.T

        x, v, s0, u = X[0], V[0], s[0], U[0]
        sv = s0 * v
        Rsv = self.R @ sv
        xQx = x @ self.Q @ x
        quad = v @ self.Rinv @ v + 2.0 * np.sum(s0 * v * v) + sv @ Rsv
        l1 = xQx + u @ self.R @ u

        Xp = X[1:]
        Y = self._observe(Xp, t)
        D = Y[:n] - Y[n:]
        disc = np.exp(-self.alpha * t) * self.c_eps
        l2 = disc * np.sum(D**2)
        gamma = xQx + quad - self.w * l2

        if Z is None:
            return Xdot, gamma, l1, l2, None, None

        xhat = np.where(r[:, None] > 0, X / np.where(r > 0, r, 1.0)[:, None], 0.0)
        Jf = (
            self.base[None]
            - np.einsum("ip,mp,pj->mij", self.B, s, self.G)
            - np.einsum("ip,mp,mj->mij", self.B, V * ds_dr, xhat)
        )
        Fk = -np.concatenate([np.einsum("ip,mp->mip", self.B, V * dk) for dk in dks], axis=2)
        Zdot = np.einsum("mij,mjq->miq", Jf, Z) + Fk

        dq_dv = 2.0 * self.Rinv @ v + 4.0 * s0 * v + 2.0 * s0 * Rsv
        dq_ds = 2.0 * v * v + 2.0 * v * Rsv
        dgamma_dX = np.zeros_like(X)
        dgamma_dX[0] = 2.0 * self.Q @ x + self.G.T @ dq_dv + (dq_ds @ ds_dr[0]) * xhat[0]
        if self.w != 0.0:
            Jh = observation_jacobian(self.h, Xp)
            dl2_plus = 2.0 * disc * np.einsum("imn,im->in", Jh[:n], D)
            dl2_minus = -2.0 * disc * np.einsum("imn,im->in", Jh[n:], D)
            dgamma_dX[1 : 1 + n] = -self.w * dl2_plus
            dgamma_dX[1 + n :] = -self.w * dl2_minus
        dgamma_dk = np.concatenate([dq_ds * dk[0] for dk in dks])
        zJdot = np.einsum("mi,miq->q", dgamma_dX, Z) + dgamma_dk
        return Xdot, gamma, l1, l2, Zdot, zJdot


def _initial_stack(problem):
    n = problem.n
    eye = np.eye(n)
    x0 = problem.x0
    return np.vstack([x0[None], x0 + problem.epsilon * eye, x0 - problem.epsilon * eye])


def _propagate(problem, gains, weights, sensitivities):
    aug = _Augmented(problem, gains, weights)
    grid = problem.grid
    dt = grid.dt
    X = _initial_stack(problem)
    q = 4 * problem.p
    Z = np.zeros(X.shape + (q,)) if sensitivities else None
    zJ = np.zeros(q)
    J = L1 = L2 = 0.0
    l1_nodes = np.empty(grid.step_count + 1)
    l2_nodes = np.empty(grid.step_count + 1)
    for k in range(grid.step_count):
        t = k * dt
        f1, g1, a1, b1, Z1, j1 = aug.rhs(t, X, Z)
        l1_nodes[k], l2_nodes[k] = a1, b1
        f2, g2, a2, b2, Z2, j2 = aug.rhs(
            t + 0.5 * dt, X + 0.5 * dt * f1, None if Z is None else Z + 0.5 * dt * Z1
        )
        f3, g3, a3, b3, Z3, j3 = aug.rhs(
            t + 0.5 * dt, X + 0.5 * dt * f2, None if Z is None else Z + 0.5 * dt * Z2
        )
        f4, g4, a4, b4, Z4, j4 = aug.rhs(
            t + dt, X + dt * f3, None if Z is None else Z + dt * Z3
        )
        X = X + (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        if not np.all(np.isfinite(X)):
            raise NonFiniteState(k + 1)
        J += (dt / 6.0) * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
        L1 += (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        L2 += (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        if Z is not None:
            Z = Z + (dt / 6.0) * (Z1 + 2.0 * Z2 + 2.0 * Z3 + Z4)
            zJ = zJ + (dt / 6.0) * (j1 + 2.0 * j2 + 2.0 * j3 + j4)
    _, _, a_end, b_end, _, _ = aug.rhs(grid.tf, X)
    l1_nodes[-1], l2_nodes[-1] = a_end, b_end
    margin = l1_nodes - aug.w * l2_nodes
    cost = CostBreakdown(
        J=float(J),
        l1_integral=float(L1),
        l2_integral=float(L2),
        positivity_margin=float(margin.min()),
        margin_trace=margin,
        times=grid.times,
    )
    return cost, (zJ if sensitivities else None)


def _null_gains(p):
    return AugmentedGains.uniform(p, 0.0, 1.0, 0.0, 0.0)


def evaluate_cost(problem, gains, weights):
    """Cost breakdown of ``gains`` (``None`` means plain LQR feedback)."""
    if gains is None:
        gains = _null_gains(problem.p)
    cost, _ = _propagate(problem, gains, weights, sensitivities=False)
    return cost


def sensitivity_gradient(problem, gains, weights):
    """``(cost, dJ/dk)`` with the gradient ordered ``k1, k2, k3, k4`` (``4p`` entries)."""
    return _propagate(problem, gains, weights, sensitivities=True)


# ---------------------------------------------------------------------------
# weight selection


def estimate_lipschitz(h, bundle):
    """Largest Jacobian spectral norm over all bundle states, with 20% margin."""
    states = bundle.stacked_states().reshape(-1, bundle.n)
    ok = in_domain(h, states)
    if not np.all(ok):
        raise DomainViolation(message="bundle leaves the observation domain")
    Jh = observation_jacobian(h, states)
    L = LIPSCHITZ_SAFETY * float(np.max(np.linalg.norm(Jh, ord=2, axis=(-2, -1))))
    if L == 0:
        raise DegenerateObservation("observation Jacobian vanishes along the bundle")
    return L


def select_weights(Q, x0, n, L, envelope):
    """Largest ``w`` and smallest ``alpha`` allowed by the positivity bounds.

    ``w = lambda_min(Q) |x0|^2 / (n L^2 K^2)`` and
    ``alpha = max(0, sigma_max(Abar)^2 - 2a)``.
    """
    x0 = np.asarray(x0, dtype=float)
    r2 = float(x0 @ x0)
    if r2 == 0:
        raise ZeroInitialState("weight bound vanishes at x0 = 0; supply w explicitly")
    if not L > 0:
        raise DegenerateObservation("Lipschitz constant must be positive")
    lam = float(np.min(np.linalg.eigvalsh(np.atleast_2d(Q))))
    w = lam * r2 / (n * L**2 * envelope.K**2)
    alpha = max(0.0, envelope.sigma_max_squared - 2.0 * envelope.a)
    return WeightSelection(w=w, alpha=alpha, L=L, envelope=envelope, update_count=0)


def monitor_and_update(cost, selection, dt=None):
    """Back off the weights when ``l1 - w l2`` went negative somewhere.

    ``w`` is halved and ``alpha`` grows by ``ln 2 / t*`` with ``t*`` the first
    violation time (floored at one grid step).
    """
    if cost.positivity_margin >= 0:
        return selection
    t_star = cost.first_violation_time
    floor = dt if dt is not None else (cost.times[1] - cost.times[0] if cost.times.size > 1 else 1.0)
    t_star = max(t_star, floor)
    return replace(
        selection,
        w=0.5 * selection.w,
        alpha=selection.alpha + np.log(2.0) / t_star,
        update_count=selection.update_count + 1,
    )


def enforce_positivity(problem, gains, selection, max_rounds=MONITOR_ROUNDS):
    """Re-evaluate and update until the positivity margin is nonnegative.

    Returns ``(selection, cost)``.
    """
    cost = evaluate_cost(problem, gains, selection)
    rounds = 0
    while cost.positivity_margin < 0:
        if rounds == max_rounds:
            raise MonitorDiverged(f"positivity still violated after {max_rounds} weight updates")
        selection = monitor_and_update(cost, selection, problem.grid.dt)
        rounds += 1
        cost = evaluate_cost(problem, gains, selection)
    return selection, cost


def auto_weights(problem, horizon=None, samples=401):
    """Weights from the LQR baseline: decay envelope, Lipschitz bound, monitor."""
    lqr = problem.lqr()
    Abar = closed_loop_matrix(problem.system, lqr)
    envelope = estimate_decay_envelope(Abar, horizon or problem.grid.tf, samples)
    L = estimate_lipschitz(problem.h, problem.bundle())
    selection = select_weights(problem.Q, problem.x0, problem.n, L, envelope)
    selection, _ = enforce_positivity(problem, None, selection)
    return selection


# ---------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class OptimizerOptions:
    max_iters: int = 200
    initial_step: float = 1e-2
    shrink: float = 0.5
    armijo: float = 1e-4
    tol: float = 1e-6
    max_shrinks: int = 40
    monitor: bool = True


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    J: float
    grad_norm: float
    step: float
    w: float
    alpha: float
    weights_updated: bool = False
    k: np.ndarray = field(default=None, repr=False)


@dataclass(frozen=True)
class OptimizationResult:
    gains: AugmentedGains
    cost: CostBreakdown
    log: list
    weights: object
    iterations: int


def project(theta):
    """Clip a stacked gain vector onto the feasible set."""
    k1, k2, k3, k4 = np.split(np.asarray(theta, dtype=float), 4)
    return np.concatenate([
        np.maximum(k1, 0.0),
        np.maximum(k2, K2_FLOOR),
        k3,
        np.clip(k4, 0.0, K4_CEIL),
    ])


def optimize_gains(problem, init, weights, options=None):
    """Projected gradient descent on ``J`` with Armijo backtracking.

    ``weights`` may be a :class:`WeightSelection` (re-monitored after every
    accepted step when ``options.monitor``) or fixed :class:`CostWeights`.
    """
    opts = options or OptimizerOptions()
    theta = project(init.as_vector())
    cost, grad = sensitivity_gradient(problem, AugmentedGains.from_vector(theta), weights)
    log = [IterationRecord(0, cost.J, float(np.linalg.norm(grad)), 0.0,
                           weights.w, weights.alpha, k=theta.copy())]
    iterations = 0
    for it in range(1, opts.max_iters + 1):
        pg = theta - project(theta - grad)
        if np.linalg.norm(pg) < opts.tol:
            break
        step = opts.initial_step
        for _ in range(opts.max_shrinks):
            cand = project(theta - step * grad)
            try:
                trial = evaluate_cost(problem, AugmentedGains.from_vector(cand), weights)
            except (DomainViolation, NonFiniteState):
                # candidate drove a bundle member out of the observation domain
                step *= opts.shrink
                continue
            if trial.J <= cost.J + opts.armijo * grad @ (cand - theta):
                break
            step *= opts.shrink
        else:
            raise LineSearchStalled(f"no sufficient decrease after {opts.max_shrinks} shrinks")

        updated = False
        if opts.monitor and isinstance(weights, WeightSelection) and trial.positivity_margin < 0:
            weights, _ = enforce_positivity(problem, AugmentedGains.from_vector(cand), weights)
            updated = True
        theta = cand
        cost, grad = sensitivity_gradient(problem, AugmentedGains.from_vector(theta), weights)
        iterations = it
        log.append(IterationRecord(it, cost.J, float(np.linalg.norm(grad)), step,
                                   weights.w, weights.alpha, updated, theta.copy()))
    return OptimizationResult(AugmentedGains.from_vector(theta), cost, log, weights, iterations)
