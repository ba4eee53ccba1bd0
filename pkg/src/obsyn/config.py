"""JSON run configuration.

Matrices are row-major nested lists; a bare number stands for that multiple
of the identity.  Everything is validated up front and problems are reported
with the dotted path of the offending field.
"""

import json
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from obsyn.errors import ConfigError
from obsyn.model import AugmentedGains, LinearSystem, make_observation
from obsyn.obsgram import CostWeights

DEMO_INIT_GAINS = (1.0, 1.0, 1.0, 0.1)


@dataclass(frozen=True)
class RunConfig:
    system: LinearSystem
    observation: object
    Q: np.ndarray
    R: np.ndarray
    gains: Optional[AugmentedGains]
    optimize: bool
    x0: np.ndarray
    tf: Optional[float]
    dt: Optional[float]
    epsilon: Optional[float]
    weights: Union[CostWeights, str]
    ekf: Optional[dict]
    seed: Optional[int]
    output_dir: Optional[str]
    max_iters: int = 200


def _require(doc, key, path):
    if not isinstance(doc, dict):
        raise ConfigError(path, "expected an object")
    if key not in doc:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return doc[key]


def _matrix(value, path, shape=None):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if shape is None or shape[0] != shape[1]:
            raise ConfigError(path, "a scalar is only allowed for square matrices of known size")
        return float(value) * np.eye(shape[0])
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a numeric nested array") from None
    if M.ndim == 1 and shape is not None and shape[1] == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise ConfigError(path, "expected a two-dimensional nested array")
    if not np.all(np.isfinite(M)):
        raise ConfigError(path, "entries must be finite")
    if shape is not None and M.shape != tuple(shape):
        raise ConfigError(path, f"expected shape {shape[0]}x{shape[1]}, got {M.shape[0]}x{M.shape[1]}")
    return M


def _vector(value, path, size=None):
    try:
        v = np.atleast_1d(np.array(value, dtype=float))
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a numeric array") from None
    if v.ndim != 1:
        raise ConfigError(path, "expected a flat array")
    if size is not None and v.size != size:
        raise ConfigError(path, f"expected {size} entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(path, "entries must be finite")
    return v


def _positive(value, path, allow_none=True):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
        raise ConfigError(path, "expected a positive number")
    return float(value)


def parse_gains(doc, p, path="gains"):
    """``{"k1": .., "k2": .., "k3": .., "k4": ..}``; scalars broadcast to all channels."""
    vals = []
    for key in ("k1", "k2", "k3", "k4"):
        raw = _require(doc, key, path)
        v = _vector(raw, f"{path}.{key}")
        if v.size == 1:
            v = np.full(p, v[0])
        if v.size != p:
            raise ConfigError(f"{path}.{key}", f"expected {p} entries (one per input)")
        vals.append(v)
    try:
        return AugmentedGains(*vals)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def parse_config(doc):
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a JSON object")
    sysdoc = _require(doc, "system", "")
    A = _matrix(_require(sysdoc, "A", "system"), "system.A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigError("system.A", "must be square")
    rawB = _require(sysdoc, "B", "system")
    if isinstance(rawB, list) and rawB and all(isinstance(b, (int, float)) for b in rawB):
        rawB = [[b] for b in rawB]  # flat list = single input column
    B = _matrix(rawB, "system.B")
    if B.shape[0] != n:
        raise ConfigError("system.B", f"expected {n} rows, got {B.shape[0]}")
    p = B.shape[1]
    system = LinearSystem(A, B)

    obsdoc = _require(doc, "observation", "")
    kind = _require(obsdoc, "type", "observation")
    if kind not in ("bearing_ratio", "relative_bearing", "linear"):
        raise ConfigError("observation.type", f"unknown observation type {kind!r}")
    params = dict(obsdoc.get("params") or {})
    if kind == "linear":
        params["C"] = _matrix(_require(params, "C", "observation.params"), "observation.params.C")
    try:
        observation = make_observation(kind, n, params)
    except ValueError as exc:
        raise ConfigError("observation", str(exc)) from None

    lqr = doc.get("lqr", {})
    Q = _matrix(lqr.get("Q", 1.0), "lqr.Q", (n, n))
    R = _matrix(lqr.get("R", 1.0), "lqr.R", (p, p))

    gains, optimize = None, False
    gdoc = doc.get("gains")
    if gdoc == "optimize":
        gains, optimize = AugmentedGains.uniform(p, *DEMO_INIT_GAINS), True
    elif isinstance(gdoc, dict) and gdoc.get("optimize"):
        init = gdoc.get("init")
        gains = parse_gains(init, p, "gains.init") if init else AugmentedGains.uniform(p, *DEMO_INIT_GAINS)
        optimize = True
    elif isinstance(gdoc, dict):
        gains = parse_gains(gdoc, p)
    elif gdoc is not None:
        raise ConfigError("gains", 'expected an object with k1..k4, or "optimize"')

    simdoc = _require(doc, "sim", "")
    x0 = _vector(_require(simdoc, "x0", "sim"), "sim.x0", n)
    tf = _positive(simdoc.get("tf"), "sim.tf")
    dt = _positive(simdoc.get("dt"), "sim.dt")
    epsilon = _positive(simdoc.get("epsilon"), "sim.epsilon")

    wdoc = doc.get("weights", "auto")
    if wdoc == "auto":
        weights = "auto"
    elif isinstance(wdoc, dict):
        try:
            weights = CostWeights(float(_require(wdoc, "w", "weights")), float(wdoc.get("alpha", 0.0)))
        except (TypeError, ValueError) as exc:
            raise ConfigError("weights", str(exc)) from None
    else:
        raise ConfigError("weights", 'expected {"w": .., "alpha": ..} or "auto"')

    ekf = doc.get("ekf")
    seed = None
    if ekf is not None:
        if not isinstance(ekf, dict):
            raise ConfigError("ekf", "expected an object")
        seed = ekf.get("seed")
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
            raise ConfigError("ekf.seed", "expected a nonnegative integer")
        m = observation.output_dim
        ekf = dict(ekf)
        for key, shape in (("process_noise", (n, n)), ("measurement_noise", (m, m)),
                           ("initial_covariance", (n, n))):
            if key in ekf:
                ekf[key] = _matrix(ekf[key], f"ekf.{key}", shape)
        if "measurement_interval" in ekf:
            ekf["measurement_interval"] = _positive(ekf["measurement_interval"], "ekf.measurement_interval")
        if "initial_estimate_scale" in ekf:
            scale = ekf["initial_estimate_scale"]
            if isinstance(scale, bool) or not isinstance(scale, (int, float)):
                raise ConfigError("ekf.initial_estimate_scale", "expected a number")

    out = doc.get("output", {}) or {}
    output_dir = out.get("directory")
    max_iters = int(doc.get("optimizer", {}).get("max_iters", 200))
    if max_iters < 0:
        raise ConfigError("optimizer.max_iters", "must be nonnegative")

    return RunConfig(system, observation, Q, R, gains, optimize, x0, tf, dt, epsilon,
                     weights, ekf, seed, output_dir, max_iters)


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}", exc.msg) from None
    return parse_config(doc)
