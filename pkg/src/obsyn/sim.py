"""Fixed-step RK4 simulation and the perturbed-trajectory bundle.

Every bundle member shares one grid, so Gramian and cost quadratures can be
taken node by node without interpolation.
"""

from dataclasses import dataclass, field

import numpy as np

from obsyn.errors import InvalidEpsilon, NonFiniteState
from obsyn.model import closed_loop_field, control

DEFAULT_DT_FRACTION = 0.005
DEFAULT_SETTLE_FACTOR = 8.0


@dataclass(frozen=True)
class SimGrid:
    """Uniform grid ``0, dt, ..., step_count * dt``.

    ``tf`` is snapped to the nearest multiple of ``dt``; the value asked for is
    kept in ``requested_tf``.
    """

    tf: float
    dt: float
    step_count: int
    requested_tf: float = field(default=None, compare=False)

    @classmethod
    def make(cls, tf, dt=None):
        if not tf > 0:
            raise ValueError("tf must be positive")
        if dt is None:
            dt = DEFAULT_DT_FRACTION * tf
        if not dt > 0:
            raise ValueError("dt must be positive")
        steps = max(1, int(round(tf / dt)))
        return cls(tf=steps * dt, dt=float(dt), step_count=steps, requested_tf=float(tf))

    @property
    def times(self):
        return self.dt * np.arange(self.step_count + 1)


def default_horizon(decay_rate):
    """Roughly the settling time ``8 / a`` of the decay envelope."""
    return DEFAULT_SETTLE_FACTOR / decay_rate


def default_epsilon(x0):
    return 1e-2 * max(1.0, float(np.linalg.norm(x0)))


@dataclass(frozen=True)
class Trajectory:
    grid: SimGrid
    states: np.ndarray
    controls: np.ndarray

    @property
    def times(self):
        return self.grid.times

    @property
    def final(self):
        return self.states[-1]


@dataclass(frozen=True)
class TrajectoryBundle:
    """Nominal run plus the ``+-epsilon e_i`` perturbed runs."""

    nominal: Trajectory
    plus: tuple
    minus: tuple
    epsilon: float

    @property
    def grid(self):
        return self.nominal.grid

    @property
    def n(self):
        return len(self.plus)

    def members(self):
        """Nominal first, then ``plus[0..n-1]``, then ``minus[0..n-1]``."""
        return (self.nominal,) + tuple(self.plus) + tuple(self.minus)

    def stacked_states(self):
        """Array ``(2n+1, steps+1, n)`` in :meth:`members` order."""
        return np.stack([m.states for m in self.members()])


def rk4_step(field_fn, x, dt):
    k1 = field_fn(x)
    k2 = field_fn(x + 0.5 * dt * k1)
    k3 = field_fn(x + 0.5 * dt * k2)
    k4 = field_fn(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(field_fn, x0, grid, control_fn=None):
    """Classical RK4 with fixed step ``grid.dt``.

    ``control_fn`` (optional) is evaluated at every node and stored alongside
    the states.
    """
    x = np.array(x0, dtype=float)
    states = np.empty((grid.step_count + 1, x.size))
    states[0] = x
    for k in range(grid.step_count):
        x = rk4_step(field_fn, x, grid.dt)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(k + 1)
        states[k + 1] = x
    if control_fn is None:
        controls = np.empty((grid.step_count + 1, 0))
    else:
        controls = np.atleast_2d(np.asarray(control_fn(states), dtype=float))
    return Trajectory(grid, states, controls)


def simulate(system, ctrl, x0, grid):
    """Closed-loop trajectory under ``ctrl``."""
    return integrate(closed_loop_field(system, ctrl), x0, grid, lambda X: control(ctrl, X))


def simulate_bundle(system, ctrl, x0, epsilon, grid):
    """Nominal and ``x0 +- epsilon e_i`` trajectories under one feedback law.

    Each member feeds back its own state.
    """
    if not epsilon > 0:
        raise InvalidEpsilon(f"epsilon must be positive, got {epsilon}")
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    eye = np.eye(n)
    # all 2n+1 members advance together; each row is an independent state
    X = np.vstack([x0, x0 + epsilon * eye, x0 - epsilon * eye])
    field_fn = closed_loop_field(system, ctrl)
    states = np.empty((grid.step_count + 1,) + X.shape)
    states[0] = X
    for k in range(grid.step_count):
        X = rk4_step(field_fn, X, grid.dt)
        if not np.all(np.isfinite(X)):
            raise NonFiniteState(k + 1)
        states[k + 1] = X
    controls = control(ctrl, states)
    members = [Trajectory(grid, states[:, j].copy(), controls[:, j].copy()) for j in range(2 * n + 1)]
    nominal, plus, minus = members[0], tuple(members[1:n + 1]), tuple(members[n + 1:])
    return TrajectoryBundle(nominal, plus, minus, float(epsilon))
