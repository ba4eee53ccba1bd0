"""Empirical observability Gramian and the running cost terms built from it.

For a bundle with perturbation ``eps`` the Gramian entries are

    W_ij = 1/(4 eps^2) int_0^tf (y+i - y-i)' (y+j - y-j) dt

accumulated with the trapezoid rule on the bundle grid.
"""

from dataclasses import dataclass

import numpy as np

from obsyn.errors import DomainViolation
from obsyn.model import in_domain, observe

PSD_TOL = 1e-10
RANK_TOL = 1e-8


@dataclass(frozen=True)
class ObservabilityReport:
    W: np.ndarray
    trace: float
    min_eigenvalue: float
    determinant: float
    numerical_rank: int
    eigenvalues: np.ndarray


@dataclass(frozen=True)
class CostWeights:
    w: float
    alpha: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.w) and np.isfinite(self.alpha)):
            raise ValueError("weights must be finite")
        if self.w < 0:
            raise ValueError("w must be nonnegative")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


def trapezoid_weights(grid):
    wts = np.full(grid.step_count + 1, grid.dt)
    wts[0] = wts[-1] = 0.5 * grid.dt
    return wts


def _outputs(states, h, times, member):
    ok = in_domain(h, states)
    if not np.all(ok):
        k = int(np.argmin(ok))
        raise DomainViolation(t=float(times[k]), member=member)
    return observe(h, states)


def output_differences(bundle, h):
    """Array ``(n, steps+1, m)`` of ``h(x+i(t)) - h(x-i(t))``."""
    times = bundle.grid.times
    n = bundle.n
    diffs = []
    for i in range(n):
        yp = _outputs(bundle.plus[i].states, h, times, 1 + i)
        ym = _outputs(bundle.minus[i].states, h, times, 1 + n + i)
        diffs.append(yp - ym)
    return np.stack(diffs)


def gramian_report(W):
    """Symmetrize ``W`` and compute its scalar metrics."""
    W = 0.5 * (W + W.T)
    eig = np.linalg.eigvalsh(W)
    scale = max(1.0, float(eig[-1]))
    if eig[0] < -PSD_TOL * scale:
        raise ValueError(f"Gramian not PSD: min eigenvalue {eig[0]:.3e}")
    clamped = np.clip(eig, 0.0, None)
    rank = int(np.sum(clamped >= RANK_TOL * scale))
    return ObservabilityReport(
        W=W,
        trace=float(np.trace(W)),
        min_eigenvalue=float(clamped[0]),
        determinant=float(np.prod(clamped)),
        numerical_rank=rank,
        eigenvalues=clamped,
    )


def empirical_gramian(bundle, h):
    D = output_differences(bundle, h)
    wts = trapezoid_weights(bundle.grid)
    W = np.einsum("t,itk,jtk->ij", wts, D, D) / (4.0 * bundle.epsilon**2)
    return gramian_report(W)


def trace_gramian(bundle, h):
    """Trace of the empirical Gramian from the summed output-difference energy."""
    D = output_differences(bundle, h)
    energy = np.sum(D**2, axis=(0, 2))
    return float(trapezoid_weights(bundle.grid) @ energy / (4.0 * bundle.epsilon**2))


def l2_series(bundle, h, weights):
    """Discounted observability index at every grid node."""
    D = output_differences(bundle, h)
    energy = np.sum(D**2, axis=(0, 2))
    t = bundle.grid.times
    return np.exp(-weights.alpha * t) * energy / (4.0 * bundle.epsilon**2)


def l2_at(t_index, bundle, h, weights):
    t = bundle.grid.times[t_index]
    total = 0.0
    n = bundle.n
    for i in range(n):
        yp = _outputs(bundle.plus[i].states[t_index], h, [t], 1 + i)
        ym = _outputs(bundle.minus[i].states[t_index], h, [t], 1 + n + i)
        total += float(np.sum((yp - ym) ** 2))
    return float(np.exp(-weights.alpha * t) * total / (4.0 * bundle.epsilon**2))


def l1_at(x, u, Q, R):
    """``x'Qx + u'Ru``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return float(x @ np.atleast_2d(Q) @ x + u @ np.atleast_2d(R) @ u)
