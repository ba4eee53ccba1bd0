"""Observability-aware feedback synthesis for linear plants with nonlinear outputs."""

from obsyn.errors import ConfigError, NumericalError, ObsynError
from obsyn.linalg import solve_care
from obsyn.model import AugmentedGains, Controller, LinearSystem, make_observation
from obsyn.obsgram import CostWeights, empirical_gramian
from obsyn.sim import SimGrid, simulate, simulate_bundle
from obsyn.synth import SynthesisProblem, auto_weights, evaluate_cost, optimize_gains

__all__ = [
    "AugmentedGains",
    "ConfigError",
    "Controller",
    "CostWeights",
    "LinearSystem",
    "NumericalError",
    "ObsynError",
    "SimGrid",
    "SynthesisProblem",
    "auto_weights",
    "empirical_gramian",
    "evaluate_cost",
    "make_observation",
    "optimize_gains",
    "simulate",
    "simulate_bundle",
    "solve_care",
]
