import numpy as np
import pytest

from sagaocp.problems import (DiffusionInstance, TransportInstance, lipschitz_constants,
                              make_instance, sample_coefficients)


def test_transport_coefficients():
    inst = TransportInstance()
    c = sample_coefficients(inst, [0.2, 0.7, 1.0, 0.5, 0.25])
    assert c.diffusivity == pytest.approx(1.5)
    x = np.array([[0.0, 0.0], [1.0, 1.0], [0.2, 0.7]])
    np.testing.assert_allclose(c.velocity(x), [[0.5, 0.0], [0.25, 0.25], [0.45, 0.175]])
    np.testing.assert_allclose(c.source(x)[2], 1.0)
    assert c.source(x)[0] == pytest.approx(np.exp(-(0.04 + 0.49) / 2))
    assert inst.control_sign == -1 and inst.beta == 1e-4 and inst.dirichlet == "left"


def test_parameter_validation():
    inst = TransportInstance()
    with pytest.raises(ValueError):
        sample_coefficients(inst, [0.5] * 4)
    with pytest.raises(ValueError):
        sample_coefficients(inst, [0.5, 0.5, 1.1, 0.5, 0.5])
    with pytest.raises(ValueError):
        TransportInstance(beta=0)


def test_diffusion_instance_is_elliptic():
    inst = DiffusionInstance(dimension=3)
    a = sample_coefficients(inst, [-1, 1, -1]).diffusivity
    pts = np.random.default_rng(0).random((500, 2)) * 2 - 1
    assert np.all(a(pts) >= inst.a_min - 1e-14)
    with pytest.raises(ValueError):
        DiffusionInstance(amplitude=2.0)


def test_lipschitz_constants_and_factory():
    inst = make_instance("transport")
    lc = lipschitz_constants(inst)
    assert lc["l"] == pytest.approx(2e-4)
    assert lc["L"] == pytest.approx(1e-4 + (1 / np.exp(-1)) ** 2)
    assert make_instance("diffusion", dimension=1).dimension == 1
    with pytest.raises(ValueError):
        make_instance("heat")
