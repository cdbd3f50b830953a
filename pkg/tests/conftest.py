import numpy as np
import pytest

from sagaocp import DiscreteOcp, DiffusionInstance, TransportInstance, tensor_gauss_legendre


def transport_ocp(m=4, q=1):
    inst = TransportInstance()
    return DiscreteOcp(inst, m, tensor_gauss_legendre(q, 5, box=inst.box))


def diffusion_ocp(m=6, q=3, dimension=2):
    inst = DiffusionInstance(dimension=dimension)
    return DiscreteOcp(inst, m, tensor_gauss_legendre(q, dimension, box=inst.box))


@pytest.fixture(scope="session")
def small_transport():
    return transport_ocp(4, 1)


@pytest.fixture(scope="session")
def transport_q2():
    return transport_ocp(4, 2)


@pytest.fixture(scope="session")
def small_diffusion():
    return diffusion_ocp()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
