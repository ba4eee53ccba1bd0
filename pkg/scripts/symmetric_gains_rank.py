"""Why identical per-channel gains cannot restore bearing observability.

For the holonomic plant with P = R = I the augmented feedback is
u = -(1 + s_i(|x|)) x_i.  Equal gains on both channels make S a multiple of
the identity, the velocity stays parallel to x and the bearing x2/x1 is
frozen.  This script sweeps a few gain sets and reports the Gramian rank and
smallest eigenvalue for each.
"""

import numpy as np

from obsyn.demos import holonomic_problem
from obsyn.model import AugmentedGains
from obsyn.obsgram import empirical_gramian
from obsyn.synth import OptimizerOptions, auto_weights, optimize_gains

CASES = {
    "uniform (1,1,1,0.1)": AugmentedGains.uniform(2, 1.0, 1.0, 1.0, 0.1),
    "uniform (3,0.5,2,0.7)": AugmentedGains.uniform(2, 3.0, 0.5, 2.0, 0.7),
    "k1 = (2, 0)": AugmentedGains(np.array([2.0, 0.0]), np.ones(2), np.ones(2), np.full(2, 0.1)),
    "k1 = (1, 0.5)": AugmentedGains(np.array([1.0, 0.5]), np.ones(2), np.ones(2), np.full(2, 0.1)),
    "k3 = (1, 2)": AugmentedGains(np.ones(2), np.ones(2), np.array([1.0, 2.0]), np.full(2, 0.1)),
}


def main():
    prob = holonomic_problem([4.0, 4.0])
    for name, g in CASES.items():
        rep = empirical_gramian(prob.bundle(g), prob.h)
        print(f"{name:24s} rank={rep.numerical_rank} min_eig={rep.min_eigenvalue:.3e}")
    res = optimize_gains(prob, CASES["uniform (1,1,1,0.1)"], auto_weights(prob), OptimizerOptions(max_iters=50))
    rep = empirical_gramian(prob.bundle(res.gains), prob.h)
    print(f"{'optimized from uniform':24s} rank={rep.numerical_rank} min_eig={rep.min_eigenvalue:.3e} "
          f"k={np.round(res.gains.as_vector(), 4).tolist()}")


if __name__ == "__main__":
    main()
