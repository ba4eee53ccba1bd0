"""Command line front end.

    obsyn <subcommand> --config run.json [--out DIR] [--seed N]
    obsyn demo holonomic|consensus [--out DIR] [--seed N]

Exit status is 0 on success, 2 for configuration errors and 3 for numerical
failures (the error class name is printed on stderr).
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from obsyn.config import load_config
from obsyn.ekf import EkfConfig, ekf_run
from obsyn.errors import ConfigError, NumericalError
from obsyn.linalg import solve_care
from obsyn.obsgram import empirical_gramian, l2_series
from obsyn.sim import SimGrid
from obsyn.synth import (
    OptimizerOptions,
    SynthesisProblem,
    WeightSelection,
    auto_weights,
    evaluate_cost,
    optimize_gains,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SUBCOMMANDS = ("care", "simulate", "gramian", "weights", "optimize", "ekf")


# ---------------------------------------------------------------------------
# files


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def emit_csv(header, rows, path):
    """Write a header plus rows; floats carry 17 significant digits."""
    rows = [list(r) for r in rows]
    if any(len(r) != len(header) for r in rows):
        raise ValueError("every row must match the header width")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            writer.writerow([_cell(v) for v in r])
    return path


def read_csv(path):
    """Inverse of :func:`emit_csv` for numeric tables: ``(header, float array)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_summary(summary, out_dir, name="summary.json"):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def gains_dict(gains):
    return {k: getattr(gains, k).tolist() for k in ("k1", "k2", "k3", "k4")}


def weights_dict(weights):
    out = {"w": weights.w, "alpha": weights.alpha}
    if isinstance(weights, WeightSelection):
        out.update(L=weights.L, K=weights.envelope.K, a=weights.envelope.a,
                   sigma_max_squared=weights.envelope.sigma_max_squared,
                   update_count=weights.update_count)
    return out


def report_dict(rep):
    return {"trace": rep.trace, "min_eigenvalue": rep.min_eigenvalue,
            "determinant": rep.determinant, "numerical_rank": rep.numerical_rank,
            "eigenvalues": rep.eigenvalues, "W": rep.W}


# ---------------------------------------------------------------------------
# tables


def trajectory_table(problem, gains, weights):
    """Columns ``t, x1..xn, u1..up, V, l1, l2`` for the nominal run."""
    bundle = problem.bundle(gains)
    nom = bundle.nominal
    X, U = nom.states, nom.controls
    V = np.einsum("ki,ij,kj->k", X, problem.P, X)
    l1 = np.einsum("ki,ij,kj->k", X, problem.Q, X) + np.einsum("ki,ij,kj->k", U, problem.R, U)
    l2 = l2_series(bundle, problem.h, weights)
    header = (["t"] + [f"x{i + 1}" for i in range(problem.n)]
              + [f"u{i + 1}" for i in range(problem.p)] + ["V", "l1", "l2"])
    rows = np.column_stack([nom.times, X, U, V, l1, l2])
    return header, rows


def gramian_table(rep):
    n = rep.W.shape[0]
    return ["row"] + [f"W{j + 1}" for j in range(n)], [[i + 1, *rep.W[i]] for i in range(n)]


def ekf_table(trace):
    n = trace.true_states.shape[1]
    header = (["t"] + [f"x{i + 1}" for i in range(n)] + [f"xhat{i + 1}" for i in range(n)]
              + [f"err{i + 1}" for i in range(n)] + [f"sigma3_{i + 1}" for i in range(n)]
              + ["measured"])
    rows = np.column_stack([trace.times, trace.true_states, trace.estimates, trace.errors,
                            trace.three_sigma, trace.measured.astype(float)])
    return header, rows


def log_table(log, p):
    header = ["iteration", "J", "grad_norm", "step", "w", "alpha", "weights_updated"]
    header += [f"k{j}_{i + 1}" for j in range(1, 5) for i in range(p)]
    rows = [[r.iteration, r.J, r.grad_norm, r.step, r.w, r.alpha, int(r.weights_updated), *r.k]
            for r in log]
    return header, rows


# ---------------------------------------------------------------------------
# subcommands


def _problem(cfg):
    grid = SimGrid.make(cfg.tf, cfg.dt) if cfg.tf else None
    return SynthesisProblem.build(cfg.system, cfg.Q, cfg.R, cfg.observation, cfg.x0,
                                  epsilon=cfg.epsilon, grid=grid, dt=cfg.dt)


def _weights(cfg, problem):
    return auto_weights(problem) if cfg.weights == "auto" else cfg.weights


def _variants(cfg):
    out = [("lqr", None)]
    if cfg.gains is not None:
        out.append(("augmented", cfg.gains))
    return out


def cmd_care(cfg, out_dir, seed):
    sol = solve_care(cfg.system.A, cfg.system.B, cfg.Q, cfg.R)
    K = sol.gain(cfg.system.B, cfg.R)
    np.set_printoptions(precision=6, suppress=True)
    print("P =\n", sol.P)
    print("gain R^-1 B^T P =\n", K)
    print("closed-loop eigenvalues:", sol.closed_loop_eigenvalues)
    eig = sol.closed_loop_eigenvalues
    return {"P": sol.P, "gain": K, "residual_norm": sol.residual_norm,
            "closed_loop_eigenvalues": {"real": eig.real, "imag": eig.imag}}


def cmd_simulate(cfg, out_dir, seed):
    problem = _problem(cfg)
    weights = _weights(cfg, problem)
    files = []
    for name, gains in _variants(cfg):
        header, rows = trajectory_table(problem, gains, weights)
        files.append(emit_csv(header, rows, os.path.join(out_dir, f"trajectory_{name}.csv")))
    return {"files": [os.path.basename(f) for f in files], "weights": weights_dict(weights),
            "tf": problem.grid.tf, "dt": problem.grid.dt, "epsilon": problem.epsilon}


def cmd_gramian(cfg, out_dir, seed):
    problem = _problem(cfg)
    metrics, rows = {}, []
    for name, gains in _variants(cfg):
        rep = empirical_gramian(problem.bundle(gains), problem.h)
        emit_csv(*gramian_table(rep), os.path.join(out_dir, f"gramian_{name}.csv"))
        metrics[name] = report_dict(rep)
        rows.append([name, rep.trace, rep.min_eigenvalue, rep.determinant, rep.numerical_rank])
        print(f"{name}: rank={rep.numerical_rank} min_eig={rep.min_eigenvalue:.6g} trace={rep.trace:.6g}")
    emit_csv(["variant", "trace", "min_eigenvalue", "determinant", "numerical_rank"], rows,
             os.path.join(out_dir, "gramian_metrics.csv"))
    return {"gramian": metrics}


def cmd_weights(cfg, out_dir, seed):
    problem = _problem(cfg)
    weights = auto_weights(problem)
    cost = evaluate_cost(problem, None, weights)
    print(f"w={weights.w:.6g} alpha={weights.alpha:.6g} L={weights.L:.6g} "
          f"K={weights.envelope.K:.6g} a={weights.envelope.a:.6g}")
    return {"weights": weights_dict(weights), "lqr_positivity_margin": cost.positivity_margin}


def cmd_optimize(cfg, out_dir, seed):
    from obsyn.config import DEMO_INIT_GAINS
    from obsyn.model import AugmentedGains

    problem = _problem(cfg)
    weights = _weights(cfg, problem)
    init = cfg.gains or AugmentedGains.uniform(problem.p, *DEMO_INIT_GAINS)
    result = optimize_gains(problem, init, weights, OptimizerOptions(max_iters=cfg.max_iters))
    emit_csv(*log_table(result.log, problem.p), os.path.join(out_dir, "optimize_log.csv"))
    write_summary({"gains": gains_dict(result.gains)}, out_dir, "gains.json")
    rep = empirical_gramian(problem.bundle(result.gains), problem.h)
    print(f"J: {result.log[0].J:.6g} -> {result.cost.J:.6g} in {result.iterations} iterations")
    return {"initial_J": result.log[0].J, "final_J": result.cost.J,
            "iterations": result.iterations, "gains": gains_dict(result.gains),
            "weights": weights_dict(result.weights), "gramian": report_dict(rep)}


def _ekf_config(cfg, problem):
    opts = {k: v for k, v in (cfg.ekf or {}).items() if k != "seed"}
    try:
        econf = EkfConfig.default(problem.n, problem.h.output_dim, problem.grid.dt, **opts)
        econf.validate(problem.n, problem.h.output_dim, problem.grid.dt)
    except (TypeError, ValueError) as exc:
        raise ConfigError("ekf", str(exc)) from None
    return econf


def cmd_ekf(cfg, out_dir, seed):
    problem = _problem(cfg)
    econf = _ekf_config(cfg, problem)
    seed = cfg.seed if seed is None else seed
    summary = {}
    for name, gains in _variants(cfg):
        ctrl = problem.lqr() if gains is None else problem.controller(gains)
        trace = ekf_run(problem.system, problem.h, ctrl, problem.x0, econf, problem.grid, seed=seed)
        emit_csv(*ekf_table(trace), os.path.join(out_dir, f"ekf_{name}.csv"))
        e = trace.error_norms
        summary[name] = {"initial_error": e[0], "final_error": e[-1],
                         "outside_3sigma_fraction": trace.outside_fraction()}
    return {"ekf": summary, "seed": seed}


COMMANDS = {
    "care": cmd_care,
    "simulate": cmd_simulate,
    "gramian": cmd_gramian,
    "weights": cmd_weights,
    "optimize": cmd_optimize,
    "ekf": cmd_ekf,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="obsyn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
    demo = sub.add_parser("demo")
    demo.add_argument("which", choices=("holonomic", "consensus"))
    demo.add_argument("--out")
    demo.add_argument("--seed", type=int, default=0)
    demo.add_argument("--iters", type=int, default=25, help="optimizer iterations in the holonomic demo")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    out_dir = args.out
    summary = {"command": args.command}
    try:
        if args.command == "demo":
            from obsyn import demos

            out_dir = out_dir or os.path.join("obsyn_out", args.which)
            os.makedirs(out_dir, exist_ok=True)
            if args.which == "holonomic":
                summary.update(demos.run_holonomic(out_dir, seed=args.seed, optimize_iters=args.iters))
            else:
                summary.update(demos.run_consensus(out_dir))
        else:
            cfg = load_config(args.config)
            out_dir = out_dir or cfg.output_dir or "obsyn_out"
            os.makedirs(out_dir, exist_ok=True)
            summary.update(COMMANDS[args.command](cfg, out_dir, args.seed))
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        if out_dir:
            summary.update(status="error", error=type(exc).__name__, exit_code=EXIT_NUMERIC)
            write_summary(summary, out_dir)
        return EXIT_NUMERIC
    summary.update(status="ok", exit_code=EXIT_OK)
    write_summary(summary, out_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
