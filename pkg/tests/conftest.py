import numpy as np
import pytest

from superpnc.drive import CavitySpec, re_paper, super_paper
from superpnc.dynamics import LossRates, SolverConfig, propagate


@pytest.fixture(scope="session")
def super_free():
    """SUPER preset, default cavity and losses, no phonons."""
    return propagate(super_paper(), CavitySpec(), LossRates(), SolverConfig())


@pytest.fixture(scope="session")
def re_free():
    return propagate(re_paper(), CavitySpec(), LossRates(), SolverConfig())


def random_density(rng: np.random.Generator, dim: int) -> np.ndarray:
    m = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = m @ m.conj().T
    return rho / np.trace(rho)
