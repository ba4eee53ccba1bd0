"""Pre-baked runs: the planar holonomic vehicle with a bearing sensor, and a
three-agent consensus network observed through relative bearings."""

import os
import time

import numpy as np

from obsyn.cli import (
    ekf_table,
    emit_csv,
    gains_dict,
    gramian_table,
    log_table,
    report_dict,
    trajectory_table,
    weights_dict,
)
from obsyn.ekf import EkfConfig, ekf_run
from obsyn.model import (
    AugmentedGains,
    LinearSystem,
    bearing_ratio,
    closed_loop_field,
    observation_jacobian,
    relative_bearing,
)
from obsyn.obsgram import empirical_gramian
from obsyn.synth import OptimizerOptions, SynthesisProblem, auto_weights, optimize_gains

# Asymmetric per-channel gains; with identical channels S(x) is a multiple of
# the identity, the motion stays radial and the bearing never changes.
DEMO_AUGMENTED_GAINS = AugmentedGains(
    k1=np.array([2.0, 0.0]),
    k2=np.array([1.0, 1.0]),
    k3=np.array([1.0, 1.0]),
    k4=np.array([0.1, 0.1]),
)
HOLONOMIC_CORNERS = ((4.0, 4.0), (-4.0, 4.0), (-4.0, -4.0), (4.0, -4.0))

CONSENSUS_A = np.array([[-2.0, 1.0, 1.0], [1.0, -2.0, 1.0], [1.0, 1.0, -2.0]])
CONSENSUS_B = np.ones((3, 1))


def holonomic_system():
    return LinearSystem(np.zeros((2, 2)), np.eye(2))


def holonomic_problem(x0, **kw):
    return SynthesisProblem.build(holonomic_system(), np.eye(2), np.eye(2), bearing_ratio(),
                                  np.asarray(x0, dtype=float), **kw)


def consensus_problem(x0=(4.0, 4.0, 4.0), **kw):
    system = LinearSystem(CONSENSUS_A, CONSENSUS_B)
    return SynthesisProblem.build(system, np.eye(3), np.eye(1), relative_bearing(3),
                                  np.asarray(x0, dtype=float), **kw)


def output_rate(problem, states, gains=None):
    """``dy/dt = J_h(x) xdot`` at each row of ``states``."""
    ctrl = problem.lqr() if gains is None else problem.controller(gains)
    field = closed_loop_field(problem.system, ctrl)
    xdot = np.array([field(x) for x in states])
    Jh = observation_jacobian(problem.h, states)
    return np.einsum("tij,tj->ti", Jh, xdot)


def _tag(x0):
    return "_".join(("p" if v > 0 else "m") + "4" for v in x0)


def run_holonomic(out_dir, seed=0, optimize_iters=25, gains=DEMO_AUGMENTED_GAINS, log=print):
    t0 = time.perf_counter()
    runs = {}
    for x0 in HOLONOMIC_CORNERS:
        tag = _tag(x0)
        problem = holonomic_problem(x0)
        weights = auto_weights(problem)
        entry = {"x0": x0, "weights": weights_dict(weights)}
        for name, g in (("lqr", None), ("augmented", gains)):
            emit_csv(*trajectory_table(problem, g, weights),
                     os.path.join(out_dir, f"trajectory_{name}_{tag}.csv"))
            rep = empirical_gramian(problem.bundle(g), problem.h)
            emit_csv(*gramian_table(rep), os.path.join(out_dir, f"gramian_{name}_{tag}.csv"))
            entry[f"gramian_{name}"] = report_dict(rep)
            log(f"x0={list(x0)} {name:9s} rank={rep.numerical_rank} min_eig={rep.min_eigenvalue:.3e}")

        econf = EkfConfig.default(2, 1, problem.grid.dt)
        for name, g in (("lqr", None), ("augmented", gains)):
            ctrl = problem.lqr() if g is None else problem.controller(g)
            trace = ekf_run(problem.system, problem.h, ctrl, problem.x0, econf, problem.grid, seed=seed)
            emit_csv(*ekf_table(trace), os.path.join(out_dir, f"ekf_{name}_{tag}.csv"))
            e = trace.error_norms
            entry[f"ekf_{name}"] = {"initial_error": e[0], "final_error": e[-1],
                                    "outside_3sigma_fraction": trace.outside_fraction()}
            log(f"x0={list(x0)} {name:9s} EKF error {e[0]:.3f} -> {e[-1]:.3e}")
        runs[tag] = entry

    summary = {"runs": runs, "augmented_gains": gains_dict(gains), "seed": seed}
    if optimize_iters > 0:
        problem = holonomic_problem(HOLONOMIC_CORNERS[0])
        weights = auto_weights(problem)
        init = AugmentedGains.uniform(2, 1.0, 1.0, 1.0, 0.1)
        res = optimize_gains(problem, init, weights, OptimizerOptions(max_iters=optimize_iters))
        emit_csv(*log_table(res.log, 2), os.path.join(out_dir, "optimize_log.csv"))
        rep = empirical_gramian(problem.bundle(res.gains), problem.h)
        summary["optimize"] = {"initial_J": res.log[0].J, "final_J": res.cost.J,
                               "iterations": res.iterations, "gains": gains_dict(res.gains),
                               "weights": weights_dict(res.weights), "gramian": report_dict(rep)}
        log(f"optimize: J {res.log[0].J:.6g} -> {res.cost.J:.6g} in {res.iterations} iterations")
    summary["elapsed_seconds"] = time.perf_counter() - t0
    return summary


def run_consensus(out_dir, log=print):
    problem = consensus_problem()
    ctrl = problem.lqr()
    gain = (ctrl.R_inv @ ctrl.feedback).ravel()
    log("u_LQR = " + " ".join(f"-{g:.4f} x{i + 1}" for i, g in enumerate(gain)))
    bundle = problem.bundle()
    states = bundle.nominal.states
    rate = float(np.max(np.abs(output_rate(problem, states))))
    rep = empirical_gramian(bundle, problem.h)
    emit_csv(*trajectory_table(problem, None, auto_weights(problem)),
             os.path.join(out_dir, "trajectory_lqr.csv"))
    emit_csv(*gramian_table(rep), os.path.join(out_dir, "gramian_lqr.csv"))
    log(f"x0 on the eigenvector [1,1,1]: max |dy/dt| = {rate:.3e}; Gramian rank {rep.numerical_rank}")
    return {"gain": gain, "max_output_rate": rate, "unobservable_along_run": rate < 1e-8,
            "gramian_lqr": report_dict(rep)}
