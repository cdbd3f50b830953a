"""Problem instances: random PDE coefficients, target, regularization.

Two presets are provided: the contaminant-transport problem (five uniform
random variables on ``[0, 1]``) and a small random-diffusion problem with
affine coefficient used in tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "CoefficientBundle",
    "ProblemInstance",
    "TransportInstance",
    "DiffusionInstance",
    "sample_coefficients",
    "lipschitz_constants",
    "make_instance",
]


@dataclass(frozen=True)
class CoefficientBundle:
    """PDE data at one parameter value.

    ``diffusivity`` is a positive scalar or a callable ``(k, 2) -> (k,)``;
    ``velocity`` is ``None`` or a callable ``(k, 2) -> (k, 2)``;
    ``source`` is a callable ``(k, 2) -> (k,)``.
    """

    diffusivity: float | Callable
    velocity: Callable | None
    source: Callable


class ProblemInstance:
    """Base class; subclasses define ``coefficients(eta)``.

    Attributes
    ----------
    dimension : int
        Number of random parameters.
    box : ndarray, shape (dimension, 2)
        Parameter box.
    beta : float
        Control cost.
    control_sign : int
        Sign with which the control enters the state right-hand side.
    dirichlet : str
        Boundary tag passed to the mesh builder.
    coercivity : float
        Lower bound on the bilinear form's coercivity constant over the box.
    poincare : float
        Upper bound on the L2/H1-seminorm Poincare constant of the domain.
    """

    dimension: int
    box: np.ndarray
    beta: float
    control_sign: int = 1
    dirichlet: str = "left"
    coercivity: float
    poincare: float = 1.0
    name: str = "instance"

    def target(self, x: np.ndarray) -> np.ndarray:
        return np.zeros(len(x))

    def coefficients(self, eta: np.ndarray) -> CoefficientBundle:
        raise NotImplementedError

    def check_parameter(self, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (self.dimension,):
            raise ValueError(f"parameter must have shape ({self.dimension},), got {eta.shape}")
        tol = 1e-12
        if np.any(eta < self.box[:, 0] - tol) or np.any(eta > self.box[:, 1] + tol):
            raise ValueError(f"parameter {eta} is outside the box")
        return eta


def sample_coefficients(instance: ProblemInstance, eta) -> CoefficientBundle:
    return instance.coefficients(instance.check_parameter(eta))


class TransportInstance(ProblemInstance):
    """Advection-diffusion of a contaminant with a Gaussian source.

    ``eps = 0.5 + exp(eta_3 - 1)``, ``V = (eta_4 - eta_5 x_1, eta_5 x_2)``,
    ``f = exp(-|x - (eta_1, eta_2)|^2 / (2 sigma^2))``; the control is
    subtracted from the source.
    """

    name = "transport"

    def __init__(self, beta: float = 1e-4, sigma: float = 1.0):
        if not beta > 0:
            raise ValueError("beta must be positive")
        self.dimension = 5
        self.box = np.tile([0.0, 1.0], (5, 1))
        self.box.setflags(write=False)
        self.beta = float(beta)
        self.sigma = float(sigma)
        self.control_sign = -1
        self.dirichlet = "left"
        self.eps_min = 0.5 + np.exp(-1.0)
        self.eps_max = 1.5
        # inflow through x = 1 is at most 1/2 * |y|^2_{x=1} <= 1/2 |grad y|^2
        self.coercivity = self.eps_min - 0.5
        self.poincare = 1.0

    def diffusivity(self, eta) -> float:
        return 0.5 + np.exp(eta[2] - 1.0)

    def coefficients(self, eta) -> CoefficientBundle:
        eta = np.asarray(eta, dtype=float)
        eps = float(0.5 + np.exp(eta[2] - 1.0))
        a, b = float(eta[3]), float(eta[4])
        z = eta[:2].copy()
        two_s2 = 2.0 * self.sigma**2

        def velocity(x):
            return np.column_stack([a - b * x[:, 0], b * x[:, 1]])

        def source(x):
            return np.exp(-np.sum((x - z) ** 2, axis=1) / two_s2)

        return CoefficientBundle(eps, velocity, source)


class DiffusionInstance(ProblemInstance):
    """Pure diffusion with affine random coefficient on ``[-1, 1]^M``.

    ``a(x) = a0 + sum_k eta_k * amp / k^2 * sin(k pi x_1) sin(k pi x_2)``,
    homogeneous Dirichlet data on the whole boundary, unit source, target
    ``z_d(x) = target_scale * sin(pi x_1) sin(pi x_2)``.
    """

    name = "diffusion"

    def __init__(self, dimension: int = 2, beta: float = 1e-2, a0: float = 1.0,
                 amplitude: float = 0.3, target_scale: float = 0.05):
        if not 1 <= dimension <= 3:
            raise ValueError("diffusion test instance supports 1 to 3 parameters")
        self.dimension = dimension
        self.box = np.tile([-1.0, 1.0], (dimension, 1))
        self.box.setflags(write=False)
        self.beta = float(beta)
        self.a0 = float(a0)
        self.amplitude = float(amplitude)
        self.target_scale = float(target_scale)
        self.control_sign = 1
        self.dirichlet = "all"
        spread = sum(self.amplitude / k**2 for k in range(1, dimension + 1))
        self.a_min = self.a0 - spread
        self.a_max = self.a0 + spread
        if self.a_min <= 0:
            raise ValueError("coefficient is not uniformly elliptic over the box")
        self.coercivity = self.a_min
        self.poincare = 1.0 / (np.sqrt(2.0) * np.pi)

    def target(self, x):
        return self.target_scale * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    def coefficients(self, eta) -> CoefficientBundle:
        eta = np.asarray(eta, dtype=float).copy()
        a0, amp = self.a0, self.amplitude

        def diffusivity(x):
            a = np.full(len(x), a0)
            for k, e in enumerate(eta, start=1):
                a += e * amp / k**2 * np.sin(k * np.pi * x[:, 0]) * np.sin(k * np.pi * x[:, 1])
            return a

        def source(x):
            return np.ones(len(x))

        return CoefficientBundle(diffusivity, None, source)


def lipschitz_constants(instance: ProblemInstance) -> dict:
    """Strong convexity ``l = 2 beta`` and analytic Lipschitz bound ``L``.

    ``L = beta + (C_p^2 / a_min)^2``: the control and observation embeddings
    into the dual and into L2 are both bounded by the Poincare constant.
    """
    beta = instance.beta
    bound = instance.poincare**2 / instance.coercivity
    return {"l": 2.0 * beta, "L": beta + bound**2}


_PRESETS = {"transport": TransportInstance, "diffusion": DiffusionInstance}


def make_instance(name: str = "transport", **overrides) -> ProblemInstance:
    try:
        cls = _PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown instance {name!r}; choose from {sorted(_PRESETS)}") from None
    return cls(**overrides)
