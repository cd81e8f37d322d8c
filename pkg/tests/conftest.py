import numpy as np
import pytest
from hypothesis import settings

from ctmcfresh import build_chain, map_structure, preset

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def binary():
    return build_chain([[-1.0, 1.0], [1.0, -1.0]], "binary")


@pytest.fixture(scope="session")
def fig6a():
    return preset("fig6a")


@pytest.fixture(scope="session")
def fig6a_map(fig6a):
    return map_structure(fig6a)


@pytest.fixture(scope="session")
def fig4():
    return preset("fig4")


@pytest.fixture(scope="session")
def fig9():
    return preset("fig9")


@pytest.fixture(scope="session")
def ring4():
    return preset("ring4")


def random_reversible(rng, S, unique_max=True):
    """Random reversible generator: symmetric conductances scaled by a random pi."""
    while True:
        pi = rng.uniform(0.2, 1.0, S)
        pi /= pi.sum()
        C = rng.uniform(0.1, 1.0, (S, S))
        C = np.triu(C, 1)
        C = C + C.T
        Q = C / pi[:, None]
        np.fill_diagonal(Q, -Q.sum(axis=1))
        top = np.sort(pi)
        if not unique_max or top[-1] - top[-2] > 1e-3:
            return build_chain(Q)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
