"""Continuous-discrete extended Kalman filter for the closed-loop plant.

The control is computed from the true state and treated as a known input by
the filter, so the estimate mean obeys ``xh' = A xh + B u``.  Truth and
estimate are advanced together by one RK4 step so that a perfectly
initialised, noise-free run reproduces the truth exactly.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from obsyn.errors import CovarianceBreakdown, DomainViolation
from obsyn.linalg import as_matrix
from obsyn.model import control, control_jacobian, in_domain, observation_jacobian, observe

COV_FLOOR = 1e-12


@dataclass(frozen=True)
class EkfConfig:
    process_noise: np.ndarray
    measurement_noise: np.ndarray
    measurement_interval: float
    initial_covariance: np.ndarray
    initial_estimate_scale: float = 1.25
    estimate_feedback: bool = False
    truth_process_noise: bool = False

    @classmethod
    def default(cls, n, m, dt, **overrides):
        """Small-noise defaults: ``1e-6 I`` process, ``1e-4 I`` measurement, every step."""
        cfg = dict(
            process_noise=1e-6 * np.eye(n),
            measurement_noise=1e-4 * np.eye(m),
            measurement_interval=dt,
            initial_covariance=np.eye(n),
        )
        cfg.update(overrides)
        return cls(**cfg)

    def validate(self, n, m, dt):
        Qp = as_matrix(self.process_noise, "process_noise")
        Rm = as_matrix(self.measurement_noise, "measurement_noise")
        P0 = as_matrix(self.initial_covariance, "initial_covariance")
        if Qp.shape != (n, n) or P0.shape != (n, n) or Rm.shape != (m, m):
            raise ValueError("EKF covariance shapes do not match the system")
        if np.min(np.linalg.eigvalsh(0.5 * (Qp + Qp.T))) < -1e-15:
            raise ValueError("process_noise must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (Rm + Rm.T))) <= 0:
            raise ValueError("measurement_noise must be positive definite")
        if np.min(np.linalg.eigvalsh(0.5 * (P0 + P0.T))) <= 0:
            raise ValueError("initial_covariance must be positive definite")
        ratio = self.measurement_interval / dt
        stride = int(round(ratio))
        if stride < 1 or abs(ratio - stride) > 1e-9 * max(1.0, ratio):
            raise ValueError("measurement_interval must be a positive multiple of dt")
        return Qp, Rm, P0, stride


@dataclass(frozen=True)
class EstimateTrace:
    times: np.ndarray
    true_states: np.ndarray
    estimates: np.ndarray
    covariances: np.ndarray
    measured: np.ndarray

    @property
    def errors(self):
        return self.estimates - self.true_states

    @property
    def error_norms(self):
        return np.linalg.norm(self.errors, axis=1)

    @property
    def three_sigma(self):
        return 3.0 * np.sqrt(np.einsum("kii->ki", self.covariances))

    def outside_fraction(self, start_fraction=0.25):
        """Share of (step, state) pairs whose error leaves the 3-sigma band."""
        k0 = int(np.ceil(start_fraction * (len(self.times) - 1)))
        out = np.abs(self.errors[k0:]) > self.three_sigma[k0:]
        return float(out.mean())


def _psd_floor(P):
    P = 0.5 * (P + P.T)
    vals, vecs = np.linalg.eigh(P)
    if vals[0] >= COV_FLOOR:
        return P
    vals = np.maximum(vals, COV_FLOOR)
    return (vecs * vals) @ vecs.T


def _riccati_rhs(F, P, Qp):
    return F @ P + P @ F.T + Qp


def ekf_run(system, h, ctrl, x0, config, grid, seed: Optional[int] = None):
    """Simulate truth and filter on ``grid``.

    With ``seed=None`` the measurements are exact; otherwise measurement noise
    is drawn from ``numpy.random.default_rng(seed)``.  ``process_noise`` is
    filter tuning; it perturbs the truth only when
    ``config.truth_process_noise`` is set, since an absolute disturbance soon
    dominates a state that decays toward the origin.
    """
    A, B = system.A, system.B
    n = system.n
    Qp, Rm, P0, stride = config.validate(n, h.output_dim, grid.dt)
    rng = None if seed is None else np.random.default_rng(seed)
    dt = grid.dt
    vals, vecs = np.linalg.eigh(0.5 * (Qp + Qp.T) * dt)
    proc_chol = (vecs * np.sqrt(np.clip(vals, 0.0, None))) if np.any(Qp) else None
    meas_chol = np.linalg.cholesky(Rm)

    x = np.asarray(x0, dtype=float).copy()
    xh = config.initial_estimate_scale * x
    P = _psd_floor(P0)
    N = grid.step_count
    truth = np.empty((N + 1, n))
    est = np.empty((N + 1, n))
    covs = np.empty((N + 1, n, n))
    measured = np.zeros(N + 1, dtype=bool)
    truth[0], est[0], covs[0] = x, xh, P

    def joint(z):
        xt, xe = z[:n], z[n:]
        u = control(ctrl, xe if config.estimate_feedback else xt)
        return np.concatenate([A @ xt + B @ u, A @ xe + B @ u])

    for k in range(N):
        t_next = (k + 1) * dt
        F = A + B @ control_jacobian(ctrl, xh) if config.estimate_feedback else A
        z = np.concatenate([x, xh])
        k1 = joint(z)
        k2 = joint(z + 0.5 * dt * k1)
        k3 = joint(z + 0.5 * dt * k2)
        k4 = joint(z + dt * k3)
        z = z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        x, xh = z[:n], z[n:]
        p1 = _riccati_rhs(F, P, Qp)
        p2 = _riccati_rhs(F, P + 0.5 * dt * p1, Qp)
        p3 = _riccati_rhs(F, P + 0.5 * dt * p2, Qp)
        p4 = _riccati_rhs(F, P + dt * p3, Qp)
        P = _psd_floor(P + (dt / 6.0) * (p1 + 2 * p2 + 2 * p3 + p4))
        if rng is not None and proc_chol is not None and config.truth_process_noise:
            x = x + proc_chol @ rng.standard_normal(n)

        if (k + 1) % stride == 0:
            if not bool(in_domain(h, xh)):
                raise DomainViolation(t=t_next, message=f"{h.name} undefined at estimate, t={t_next:g}")
            y = observe(h, x)
            if rng is not None:
                y = y + meas_chol @ rng.standard_normal(h.output_dim)
            H = observation_jacobian(h, xh)
            S = H @ P @ H.T + Rm
            if np.linalg.cond(S) > 1e12:
                raise CovarianceBreakdown(f"innovation covariance singular at t={t_next:g}")
            K = np.linalg.solve(S, H @ P).T
            xh = xh + K @ (y - observe(h, xh))
            IKH = np.eye(n) - K @ H
            P = _psd_floor(IKH @ P @ IKH.T + K @ Rm @ K.T)
            measured[k + 1] = True
        truth[k + 1], est[k + 1], covs[k + 1] = x, xh, P
    return EstimateTrace(grid.times, truth, est, covs, measured)
