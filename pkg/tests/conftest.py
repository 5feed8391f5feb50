import numpy as np
import pytest

from ipslab.dynamics import cyclic_rotation, heat_bath, reverse_rates
from ipslab.exact import build_generator, stationary_measure
from ipslab.model import SiteGraph, Specification, StateSpace, ising, potts


class Bundle:
    """Model pieces built once per test module."""

    def __init__(self, spec, rates, space):
        self.spec, self.rates, self.space = spec, rates, space
        self.L = build_generator(rates, space)
        self.mu = stationary_measure(self.L)
        self.rates_hat = reverse_rates(rates, spec)
        self.L_hat = build_generator(self.rates_hat, space)


def ising_ring(n=4, beta=0.5):
    g = SiteGraph.ring(n)
    spec = Specification(ising(g, beta))
    return Bundle(spec, heat_bath(spec), StateSpace(g, 2))


def rotation_ring(n=4, q=3):
    g = SiteGraph.ring(n)
    spec = Specification(potts(g, q, 0.0))
    return Bundle(spec, cyclic_rotation(g, q), StateSpace(g, q))


@pytest.fixture(scope="module")
def ring4():
    return ising_ring(4, 0.5)


@pytest.fixture(scope="module")
def rotation():
    return rotation_ring()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria record one line each; printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
