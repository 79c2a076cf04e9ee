import sys
from pathlib import Path

import numpy as np
from scipy.stats import unitary_group

sys.path.insert(0, str(Path(__file__).parent))

from nmrkrotov.spinops import SpinSystem  # noqa: E402


def herm(rng, d):
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (X + X.conj().T)


def cmat(rng, d):
    return rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))


def psd(rng, d):
    X = cmat(rng, d)
    return X @ X.conj().T / d


def random_unitary(rng, d):
    return unitary_group.rvs(d, random_state=int(rng.integers(2 ** 31)))


def random_system(rng, d=4, K=2):
    spins = (0.5, 0.5) if d == 4 else ((d - 1) / 2,)
    return SpinSystem(spins, herm(rng, d), tuple((f"c{k}", herm(rng, d)) for k in range(K)))
