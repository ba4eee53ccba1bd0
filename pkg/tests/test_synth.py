import numpy as np
import pytest
from conftest import random_gains

from obsyn.errors import DegenerateObservation, MonitorDiverged, ZeroInitialState
from obsyn.linalg import DecayEnvelope
from obsyn.model import AugmentedGains, LinearSystem, control, linear_observation, make_observation
from obsyn.obsgram import CostWeights, l1_at, l2_at
from obsyn.sim import SimGrid
from obsyn.synth import (
    LIPSCHITZ_SAFETY,
    OptimizerOptions,
    SynthesisProblem,
    WeightSelection,
    enforce_positivity,
    estimate_lipschitz,
    evaluate_cost,
    gamma_at,
    monitor_and_update,
    optimize_gains,
    project,
    select_weights,
    sensitivity_gradient,
)

I2 = np.eye(2)


def perturbed_at(bundle, k):
    return np.array([m.states[k] for m in bundle.plus + bundle.minus])


# -- Gamma -------------------------------------------------------------------


def test_gamma_reference_value():
    x = np.array([1.0, 1.0])
    pert = np.array([[1.1, 1], [1, 1.1], [0.9, 1], [1, 0.9]])
    g = gamma_at(x, pert, make_observation("bearing_ratio", 2), I2, I2, I2, I2, None,
                 CostWeights(0.0), 0.0, 0.1)
    assert g == pytest.approx(4.0)


def test_gamma_lqr_reduction(holo):
    b = holo.bundle()
    x = b.nominal.states[5]
    zero = AugmentedGains.uniform(2, 0.0, 1.0, 1.0, 0.0)
    g = gamma_at(x, perturbed_at(b, 5), holo.h, holo.P, holo.system.B, holo.Q, holo.R, zero,
                 CostWeights(0.0), b.grid.times[5], holo.epsilon)
    assert g == pytest.approx(l1_at(x, b.nominal.controls[5], holo.Q, holo.R), rel=1e-12)


def test_gamma_identity_random(holo):
    rng = np.random.default_rng(0)
    for _ in range(20):
        gains = random_gains(rng)
        wts = CostWeights(rng.uniform(0, 2), rng.uniform(0, 1))
        b = holo.bundle(gains)
        k = int(rng.integers(0, b.grid.step_count + 1))
        x = b.nominal.states[k]
        u = control(holo.controller(gains), x)
        gam = gamma_at(x, perturbed_at(b, k), holo.h, holo.P, holo.system.B, holo.Q, holo.R,
                       gains, wts, b.grid.times[k], holo.epsilon)
        rhs = l1_at(x, u, holo.Q, holo.R)
        assert gam + wts.w * l2_at(k, b, holo.h, wts) == pytest.approx(rhs, rel=1e-9, abs=1e-9)


# -- cost --------------------------------------------------------------------


def test_cost_decomposition(holo, holo_weights):
    c = evaluate_cost(holo, AugmentedGains.uniform(2, 1.0, 1.0, 1.0, 0.1), holo_weights)
    assert c.J == pytest.approx(c.l1_integral - holo_weights.w * c.l2_integral, abs=1e-9)
    assert c.l1_integral >= 0 and c.l2_integral >= 0


def test_lqr_cost_converges_to_riccati_value():
    sys_ = LinearSystem(np.zeros((2, 2)), I2)
    prob = SynthesisProblem.build(sys_, I2, I2, make_observation("bearing_ratio", 2), [4.0, 4.0],
                                  grid=SimGrid.make(20.0, 0.01))
    c = evaluate_cost(prob, None, CostWeights(0.0))
    assert c.J == pytest.approx(32.0, rel=1e-2)


def test_lqr_cost_matches_trajectory_quadrature(holo):
    c = evaluate_cost(holo, AugmentedGains.uniform(2, 0.0, 1.0, 1.0, 0.3), CostWeights(0.0))
    nom = holo.bundle().nominal
    l1 = np.sum(nom.states**2, axis=1) + np.sum(nom.controls**2, axis=1)
    dt = holo.grid.dt
    trap = dt * (l1.sum() - 0.5 * (l1[0] + l1[-1]))
    assert c.J == pytest.approx(trap, rel=1e-3)


def test_zero_initial_state_cost_is_zero():
    prob = SynthesisProblem.build(LinearSystem(np.zeros((2, 2)), I2), I2, I2, linear_observation(I2),
                                  np.zeros(2), epsilon=0.01, grid=SimGrid.make(2.0))
    c = evaluate_cost(prob, AugmentedGains.uniform(2, 1.0, 1.0, 1.0, 0.1), CostWeights(0.0))
    assert c.J == 0.0


# -- gradient ----------------------------------------------------------------


def fd_gradient(problem, gains, weights, h=1e-5):
    theta = gains.as_vector()
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        jp = evaluate_cost(problem, AugmentedGains.from_vector(theta + e), weights).J
        jm = evaluate_cost(problem, AugmentedGains.from_vector(theta - e), weights).J
        out[i] = (jp - jm) / (2 * h)
    return out


def test_gradient_matches_fd_reference(holo, holo_weights):
    gains = AugmentedGains.uniform(2, 1.0, 1.0, 1.0, 0.5)
    _, grad = sensitivity_gradient(holo, gains, holo_weights)
    fd = fd_gradient(holo, gains, holo_weights)
    assert np.linalg.norm(grad - fd) <= 1e-4 * np.linalg.norm(fd)


def test_gradient_with_large_w():
    prob = SynthesisProblem.build(LinearSystem(np.zeros((2, 2)), I2), I2, I2,
                                  make_observation("bearing_ratio", 2), [4.0, 1.0], grid=SimGrid.make(3.0))
    wts = CostWeights(0.5, 0.3)
    gains = AugmentedGains(np.array([1.0, 0.4]), np.array([0.7, 1.5]), np.array([1.2, -0.8]), np.array([0.3, 0.9]))
    _, grad = sensitivity_gradient(prob, gains, wts)
    fd = fd_gradient(prob, gains, wts)
    assert np.linalg.norm(grad - fd) <= 1e-4 * np.linalg.norm(fd)


def test_k4_gradient_vanishes_without_k1(holo):
    gains = AugmentedGains.uniform(2, 0.0, 1.0, 1.0, 0.4)
    _, grad = sensitivity_gradient(holo, gains, CostWeights(0.0))
    assert np.all(grad[6:] == 0.0)


def test_gradient_cost_agrees_with_evaluate(holo, holo_weights):
    gains = AugmentedGains.uniform(2, 1.5, 0.5, 2.0, 0.2)
    c1, _ = sensitivity_gradient(holo, gains, holo_weights)
    c2 = evaluate_cost(holo, gains, holo_weights)
    assert c1.J == c2.J


# -- weights -----------------------------------------------------------------


def test_select_weights_reference():
    env = DecayEnvelope(K=1.0, a=0.9, sigma_max_squared=1.0)
    sel = select_weights(I2, np.array([4.0, 4.0]), 2, 1.0, env)
    assert sel.w == pytest.approx(16.0)
    assert sel.alpha == 0.0
    with pytest.raises(ZeroInitialState):
        select_weights(I2, np.zeros(2), 2, 1.0, env)


def test_select_weights_alpha_bound():
    env = DecayEnvelope(K=2.0, a=0.9, sigma_max_squared=9.0)
    sel = select_weights(2 * I2, np.array([1.0, 0.0]), 2, 3.0, env)
    assert sel.alpha == pytest.approx(9.0 - 1.8)
    assert sel.w == pytest.approx(2.0 / (2 * 9 * 4))


def test_lipschitz_linear(holo):
    C = np.array([[1.0, 2.0], [0.5, -1.0]])
    L = estimate_lipschitz(linear_observation(C), holo.bundle())
    assert L == pytest.approx(LIPSCHITZ_SAFETY * np.linalg.norm(C, 2))


def test_lipschitz_bearing_bound():
    prob = SynthesisProblem.build(LinearSystem(np.zeros((2, 2)), I2), I2, I2,
                                  make_observation("bearing_ratio", 2), [4.0, 3.0], grid=SimGrid.make(0.2))
    b = prob.bundle()
    X = b.stacked_states().reshape(-1, 2)
    assert np.all(X[:, 0] >= 1) and np.all(np.linalg.norm(X, axis=1) <= 6)
    bound = max(np.linalg.norm([-x[1] / x[0] ** 2, 1 / x[0]]) for x in X)
    assert estimate_lipschitz(prob.h, b) <= LIPSCHITZ_SAFETY * bound * (1 + 1e-12)


def test_lipschitz_constant_map_rejected(holo):
    with pytest.raises(DegenerateObservation):
        estimate_lipschitz(linear_observation(np.zeros((1, 2))), holo.bundle())


def _cost_with_margin(margin, t_first=None):
    from obsyn.synth import CostBreakdown

    times = np.linspace(0, 2, 5)
    trace = np.full(5, 0.3)
    if t_first is not None:
        trace[times >= t_first] = margin
    return CostBreakdown(0.0, 0.0, 0.0, float(trace.min()), trace, times)


def test_monitor_no_violation():
    sel = WeightSelection(1.0, 0.2, 1.0, None, 3)
    assert monitor_and_update(_cost_with_margin(0.3), sel) is sel


def test_monitor_update_rule():
    sel = WeightSelection(1.0, 0.2, 1.0, None, 0)
    new = monitor_and_update(_cost_with_margin(-0.1, 1.0), sel)
    assert new.w == 0.5 and new.alpha == pytest.approx(0.2 + np.log(2)) and new.update_count == 1


def test_monitor_diverges_when_l2_dominates(holo):
    sel = WeightSelection(1e12, 0.0, 1.0, None, 0)
    with pytest.raises(MonitorDiverged):
        enforce_positivity(holo, AugmentedGains.uniform(2, 1.0, 1.0, 1.0, 0.1), sel, max_rounds=3)


def test_auto_weights_margin_nonnegative(holo, holo_weights):
    assert evaluate_cost(holo, None, holo_weights).positivity_margin >= 0


# -- optimizer ---------------------------------------------------------------


def test_projection():
    theta = np.array([-1.0, 2, -3, 4, 5, 6, -1, 9])
    assert np.array_equal(project(theta)[:2], [0.0, 2.0])
    assert np.all(project(theta)[2:4] >= 1e-6)
    assert np.all((project(theta)[6:] >= 0) & (project(theta)[6:] < np.pi / 2))


def test_zero_iterations_returns_init(holo, holo_weights):
    init = AugmentedGains.uniform(2, 1.0, 1.0, 1.0, 0.1)
    res = optimize_gains(holo, init, holo_weights, OptimizerOptions(max_iters=0))
    assert res.iterations == 0
    assert np.array_equal(res.gains.as_vector(), init.as_vector())
    assert res.cost.J == evaluate_cost(holo, init, holo_weights).J


def test_stationary_init_returns_unchanged(holo):
    # with w=0 the LQR gains are optimal; k1=0 sits on the boundary with a
    # nonnegative gradient and the remaining partials vanish
    init = AugmentedGains.uniform(2, 0.0, 1.0, 1.0, 0.0)
    res = optimize_gains(holo, init, CostWeights(0.0), OptimizerOptions(max_iters=10))
    assert res.iterations == 0
    assert np.array_equal(res.gains.as_vector(), init.as_vector())


def test_short_descent(holo, holo_weights):
    init = AugmentedGains.uniform(2, 1.0, 1.0, 1.0, 0.1)
    res = optimize_gains(holo, init, holo_weights, OptimizerOptions(max_iters=8))
    J = [r.J for r in res.log]
    assert all(b <= a for a, b in zip(J, J[1:]))
    assert res.cost.J <= J[0]
