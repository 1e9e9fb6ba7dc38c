import numpy as np
import pytest

from phisob.phi_core import builtin_phi
from phisob.measures import Atoms, ScalarField


@pytest.fixture(scope="session")
def xlogx():
    return builtin_phi("xlogx")


@pytest.fixture(scope="session")
def square():
    return builtin_phi("square")


@pytest.fixture(scope="session")
def power15():
    return builtin_phi("power", p=1.5)


def random_atoms(rng, n=5, dim=1, spread=1.0):
    pts = rng.normal(0.0, spread, size=(n, dim))
    w = rng.gamma(1.0, 1.0, size=n)
    return Atoms(pts, w / w.sum())


def random_positive_field(rng, dim=1):
    """Smooth, bounded, strictly positive: safe for half-line bases."""
    a = rng.uniform(0.1, 0.5)
    b = rng.uniform(0.5, 2.0)
    c = rng.uniform(0.0, 2 * np.pi)
    d = rng.uniform(-0.3, 0.3)

    def fn(x):
        return np.exp(a * np.sin(b * x[:, 0] + c) + d)

    def grad(x):
        g = np.zeros_like(x)
        g[:, 0] = fn(x) * a * b * np.cos(b * x[:, 0] + c)
        return g

    return ScalarField(dim, fn, grad_fn=grad, name="exp-sin")


def random_smooth_field(rng, dim=1):
    a = rng.uniform(-1.0, 1.0)
    b = rng.uniform(0.5, 2.0)
    c = rng.uniform(0.0, 2 * np.pi)
    d = rng.uniform(-0.5, 0.5)

    def fn(x):
        return a * np.sin(b * x[:, 0] + c) + d * x[:, 0]

    def grad(x):
        g = np.zeros_like(x)
        g[:, 0] = a * b * np.cos(b * x[:, 0] + c) + d
        return g

    return ScalarField(dim, fn, grad_fn=grad, name="sin-lin")
