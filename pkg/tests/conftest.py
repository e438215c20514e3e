import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from trapflux.bath import SpectralDensity, build_eta_table
from trapflux.influence import BathCoupling
from trapflux.model import InitialCondition, excitonic_trimer, polaritonic_trimer

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

OHMIC = SpectralDensity.ohmic(0.121, 900.0)


@pytest.fixture(scope="session")
def ohmic():
    return OHMIC


@pytest.fixture(scope="session")
def eta_k3():
    return build_eta_table(OHMIC, 300.0, 0.01, memory=3)


@pytest.fixture(scope="session")
def eta_k8():
    return build_eta_table(OHMIC, 300.0, 0.01, memory=8)


@pytest.fixture
def trimer():
    return excitonic_trimer()


@pytest.fixture
def polariton():
    return polaritonic_trimer()


def site_rho(n, j=0):
    return InitialCondition(j).density(n)


def trimer_baths(eta, n=3):
    return [BathCoupling(j, eta) for j in range(n)]


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
