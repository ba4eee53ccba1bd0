import numpy as np
import pytest

from obsyn.demos import holonomic_problem
from obsyn.synth import auto_weights


@pytest.fixture(scope="session")
def holo():
    return holonomic_problem(np.array([4.0, 4.0]))


@pytest.fixture(scope="session")
def holo_weights(holo):
    return auto_weights(holo)


def random_gains(rng, p=2):
    from obsyn.model import AugmentedGains

    return AugmentedGains(rng.uniform(0, 3, p), rng.uniform(0.2, 3, p), rng.uniform(-3, 3, p),
                          rng.uniform(0, 1.5, p))
