import numpy as np
import pytest

from rnnstab.model import RnnModel, build_closed_loop
from rnnstab.sigmoid import TANH
from rnnstab.synthesis import H2Weights


def scalar_plant(kind=TANH):
    """x+ = u + 0.5 sigma(x): open loop A = 0.5 at K = 0."""
    return RnnModel(np.zeros((1, 1)), np.ones((1, 1)), 0.5 * np.ones((1, 1)),
                    np.ones((1, 1)), np.zeros((1, 1)), kind)


def integrator_plant(kind=TANH):
    """x+ = x + 0.5 sigma(u): A0 has an uncontrollable eigenvalue at one."""
    return RnnModel(np.ones((1, 1)), np.zeros((1, 1)), 0.5 * np.ones((1, 1)),
                    np.zeros((1, 1)), np.ones((1, 1)), kind)


def saturated_plant(kind=TANH):
    """x+ = 1.2 x + 0.5 sigma(u): no state with |x| >= 2.5 can be steered inward."""
    return RnnModel(1.2 * np.ones((1, 1)), np.zeros((1, 1)), 0.5 * np.ones((1, 1)),
                    np.zeros((1, 1)), np.ones((1, 1)), kind)


def scalar_weights():
    return H2Weights(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]]))


@pytest.fixture
def plant():
    return scalar_plant()


@pytest.fixture
def integ():
    return integrator_plant()


@pytest.fixture
def sat_plant():
    return saturated_plant()


@pytest.fixture
def w8():
    return scalar_weights()


@pytest.fixture
def scalar_loop():
    """A = 0.5, B = -0.5, C = 1."""
    return build_closed_loop(scalar_plant(), np.zeros((1, 1)))


@pytest.fixture(scope="session")
def bench3():
    """Identified ESN (n_s = 3) with integrator, plus benchmark weights."""
    from rnnstab.model import augment_integrator
    from rnnstab.synthesis import benchmark_weights
    from rnnstab.verify import generate_surrogate_data, identify_esn

    tr = identify_esn(generate_surrogate_data(seed=0), n_s=3, seed=0)
    return tr, augment_integrator(tr.esn), benchmark_weights(tr.esn.wy)
