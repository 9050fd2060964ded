import numpy as np
import pytest

from freqctl.harness.case import load_case
from freqctl.netmodel import BusSets, ReducedNetwork, dc_partition
from freqctl.plant import solve_equilibrium


def random_network(rng, n_gen=3, n_ibr=1, lossless=True, scale=1.0):
    """Dense random reduced network with positive couplings."""
    n = n_gen + n_ibr
    b = rng.uniform(0.5, 2.0, (n, n)) * scale
    b = np.triu(b, 1)
    b = b + b.T
    np.fill_diagonal(b, -b.sum(axis=1))
    g = np.zeros((n, n))
    if not lossless:
        g = np.triu(rng.uniform(0.0, 0.2, (n, n)), 1)
        g = g + g.T
        np.fill_diagonal(g, g.sum(axis=1) + 0.05)
    emf = rng.uniform(0.95, 1.1, n)
    sets = BusSets(tuple(range(n_gen)), tuple(range(n_gen, n)), slack=0)
    return ReducedNetwork(g=g, b=b, emf=emf, bus_sets=sets)


@pytest.fixture(scope="session")
def toy():
    return load_case("toy3")


@pytest.fixture(scope="session")
def ne39():
    return load_case("ne39")


@pytest.fixture(scope="session")
def toy_eq(toy):
    return solve_equilibrium(toy.net, toy.p_gen, toy.p_ibr)


@pytest.fixture(scope="session")
def toy_part(toy, toy_eq):
    return dc_partition(toy.net, (toy_eq.delta, toy_eq.u))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
