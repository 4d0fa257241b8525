import numpy as np
import pytest

from mixgame.config import catalog_coefficients, catalog_payoff, shipped_spec
from mixgame.model import GameSpec


def make_spec(coeff, payoff="cos", U=(-1.0, 1.0), V=(-1.0, 1.0), d=1, d_prime=None, T=1.0, growth=2.0,
              payoff_params=None, **params):
    d_prime = d if d_prime is None else d_prime
    b, sigma = catalog_coefficients(coeff, d, d_prime, **params)
    g = catalog_payoff(payoff, d, **(payoff_params or {}))
    return GameSpec(d, d_prime, T, b, sigma, g, list(U), list(V), growth_constant=growth, name=coeff)


def custom_spec(b, sigma, g=None, U=(-1.0, 1.0), V=(-1.0, 1.0), d=1, d_prime=None, T=1.0, growth=None):
    d_prime = d if d_prime is None else d_prime
    g = g or (lambda x: np.cos(x[..., 0]))
    return GameSpec(d, d_prime, T, b, sigma, g, list(U), list(V), growth_constant=growth, name="custom")


@pytest.fixture(scope="session")
def heat():
    return shipped_spec("heat")


@pytest.fixture(scope="session")
def pennies():
    return shipped_spec("matching_pennies")


@pytest.fixture(scope="session")
def pennies_linear():
    return shipped_spec("matching_pennies_linear")
