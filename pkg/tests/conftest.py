import numpy as np
import pytest

from aaim.geometry import FlowField, MicArray


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def still_air():
    return FlowField(speed_of_sound=343.0, mach=[0.0, 0.0, 0.0])


@pytest.fixture
def three_mics():
    return MicArray(positions=np.array([[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [0.0, 0.35, 0.02]]))


def random_hermitian_pd(rng, n, ridge=None):
    """Random Hermitian positive-definite matrix of size n."""
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    if ridge is None:
        ridge = 0.5 * n
    return a @ a.conj().T + ridge * np.eye(n)


def random_complex_vector(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)
