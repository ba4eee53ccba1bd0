import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from obsyn.errors import DomainViolation
from obsyn.linalg import linear_obs_gramian
from obsyn.model import (
    AugmentedGains,
    Controller,
    LinearSystem,
    bearing_ratio,
    closed_loop_matrix,
    linear_observation,
    observe,
)
from obsyn.obsgram import (
    CostWeights,
    empirical_gramian,
    l1_at,
    l2_at,
    l2_series,
    trace_gramian,
    trapezoid_weights,
)
from obsyn.sim import SimGrid, Trajectory, TrajectoryBundle, simulate_bundle

I2 = np.eye(2)
HOLO = LinearSystem(np.zeros((2, 2)), I2)
LQR = Controller(I2, I2, I2)


def static_bundle(eps, tf=1.0):
    A0 = LinearSystem(np.zeros((2, 2)), np.zeros((2, 1)))
    ctrl = Controller(np.zeros((2, 1)), I2, np.eye(1))
    return simulate_bundle(A0, ctrl, np.array([1.0, 2.0]), eps, SimGrid.make(tf, 0.01))


@pytest.mark.parametrize("eps", [1e-3, 0.1, 0.7])
def test_static_identity_gramian(eps):
    rep = empirical_gramian(static_bundle(eps), linear_observation(I2))
    assert np.allclose(rep.W, I2, atol=1e-12)
    assert trace_gramian(static_bundle(eps), linear_observation(I2)) == pytest.approx(2.0)


def test_holonomic_lqr_bearing_rank_one():
    b = simulate_bundle(HOLO, LQR, np.array([4.0, 4.0]), 0.04, SimGrid.make(8.0 / 0.9))
    rep = empirical_gramian(b, bearing_ratio())
    assert rep.numerical_rank == 1
    assert rep.min_eigenvalue < 1e-10


def test_trace_closed_form_time_constant():
    eps = 0.04
    b = simulate_bundle(HOLO, LQR, np.array([4.0, 4.0]), eps, SimGrid.make(1.0, 0.01))
    h = bearing_ratio()
    y0 = [observe(h, b.plus[i].states[0]) - observe(h, b.minus[i].states[0]) for i in range(2)]
    expected = 1.0 * sum(float(np.sum(d**2)) for d in y0) / (4 * eps**2)
    assert trace_gramian(b, h) == pytest.approx(expected, rel=1e-10)


def test_degenerate_bundle_zero():
    grid = SimGrid.make(1.0, 0.1)
    X = np.ones((grid.step_count + 1, 2))
    t = Trajectory(grid, X, np.zeros((grid.step_count + 1, 0)))
    b = TrajectoryBundle(t, (t, t), (t, t), 0.1)
    assert trace_gramian(b, bearing_ratio()) == 0.0
    assert l2_at(3, b, bearing_ratio(), CostWeights(1.0, 0.5)) == 0.0


@pytest.mark.parametrize("eps", [1e-3, 1e-2, 1e-1])
def test_linear_output_matches_analytic(eps):
    rng = np.random.default_rng(7)
    A = rng.standard_normal((2, 2))
    B = rng.standard_normal((2, 1))
    P = sla.solve_continuous_are(A, B, I2, np.eye(1))
    ctrl = Controller(B, P, np.eye(1))
    C = rng.standard_normal((1, 2))
    grid = SimGrid.make(3.0)
    b = simulate_bundle(LinearSystem(A, B), ctrl, rng.standard_normal(2), eps, grid)
    W = empirical_gramian(b, linear_observation(C)).W
    Wa = linear_obs_gramian(closed_loop_matrix(LinearSystem(A, B), ctrl), C, grid.tf, steps=grid.step_count)
    assert np.allclose(W, Wa, atol=1e-6)


def test_trace_identity_and_psd():
    g = AugmentedGains(np.array([2.0, 0.0]), np.ones(2), np.ones(2), np.full(2, 0.1))
    b = simulate_bundle(HOLO, Controller(I2, I2, I2, g), np.array([4.0, -4.0]), 0.05, SimGrid.make(6.0))
    rep = empirical_gramian(b, bearing_ratio())
    assert rep.trace == pytest.approx(trace_gramian(b, bearing_ratio()), abs=1e-9)
    assert np.min(np.linalg.eigvalsh(rep.W)) >= -1e-10
    assert rep.numerical_rank == 2


def test_trace_monotone_in_horizon():
    g = AugmentedGains.uniform(2, 1.0, 1.0, 2.0, 0.2)
    ctrl = Controller(I2, I2, I2, g)
    traces = [trace_gramian(simulate_bundle(HOLO, ctrl, np.array([3.0, 1.0]), 0.03, SimGrid.make(tf, 0.01)),
                            bearing_ratio()) for tf in (1.0, 2.0, 4.0)]
    assert traces[0] <= traces[1] <= traces[2]


def test_l2_integral_equals_trace_without_discount():
    g = AugmentedGains.uniform(2, 1.0, 1.0, 2.0, 0.2)
    b = simulate_bundle(HOLO, Controller(I2, I2, I2, g), np.array([3.0, 1.0]), 0.03, SimGrid.make(4.0))
    h = bearing_ratio()
    series = l2_series(b, h, CostWeights(1.0, 0.0))
    assert trapezoid_weights(b.grid) @ series == pytest.approx(trace_gramian(b, h), rel=1e-12)
    assert l2_at(17, b, h, CostWeights(1.0, 0.0)) == pytest.approx(series[17], rel=1e-12)


def test_l2_discount_ratio():
    b = simulate_bundle(HOLO, LQR, np.array([4.0, 4.0]), 0.04, SimGrid.make(4.0))
    h = bearing_ratio()
    wts = CostWeights(1.0, 0.7)
    base = l2_at(0, b, h, wts)
    for k in (10, 100, 200):
        t = b.grid.times[k]
        assert l2_at(k, b, h, wts) / base == pytest.approx(np.exp(-0.7 * t), rel=1e-9)


def test_l1_examples():
    assert l1_at([0, 0], [0, 0], I2, I2) == 0.0
    assert l1_at([1, 1], [-1, -1], I2, I2) == 4.0
    assert l1_at(3.0, 0.0, 2.0, 1.0) == 18.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_l1_nonnegative(x, u):
    assert l1_at(x, u, I2, 2 * I2) >= 0


def test_domain_violation_reports_member():
    grid = SimGrid.make(1.0, 0.5)
    good = Trajectory(grid, np.ones((3, 2)), np.zeros((3, 0)))
    bad = Trajectory(grid, np.array([[1.0, 1], [0.0, 1], [1, 1]]), np.zeros((3, 0)))
    b = TrajectoryBundle(good, (good, bad), (good, good), 0.1)
    with pytest.raises(DomainViolation) as exc:
        empirical_gramian(b, bearing_ratio())
    assert exc.value.member == 2 and exc.value.t == pytest.approx(0.5)


def test_weights_validation():
    with pytest.raises(ValueError):
        CostWeights(-1.0)
    with pytest.raises(ValueError):
        CostWeights(1.0, -0.1)
