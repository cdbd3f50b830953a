"""Stochastic-approximation solvers for optimal control of PDEs with random coefficients.

Submodules
----------
quadrature : Gauss-Legendre tensor rules, discrete expectation, index sampling
fem        : P1 finite elements on the unit square, solves, interpolation, I/O
problems   : problem instances (transport, diffusion)
ocp        : the discrete finite-sum control problem, gradients, Hessian
optim      : CG, SG-IS and SAGA-IS with traces and rate fits
studies    : numerical studies and the tolerance-driven complexity driver
"""
from .fem import build_mesh, build_space, prolongate
from .ocp import DiscreteOcp, empirical_lipschitz, validate_gradient
from .optim import (CgConfig, DivergenceError, IterTrace, SagaConfig, SgConfig,
                    fit_exponential_rate, fit_power_law, init_saga_state, run_saga_is,
                    run_sg_is, saga_step, solve_cg, theoretical_step_and_rate)
from .problems import DiffusionInstance, TransportInstance, lipschitz_constants, make_instance
from .quadrature import (QuadratureRule, SamplingDistribution, draw_index, expectation,
                         gauss_legendre, s_tilde, tensor_gauss_legendre)

__version__ = "0.1.0"

__all__ = [
    "build_mesh", "build_space", "prolongate",
    "DiscreteOcp", "empirical_lipschitz", "validate_gradient",
    "CgConfig", "SgConfig", "SagaConfig", "IterTrace", "DivergenceError",
    "solve_cg", "run_sg_is", "run_saga_is", "init_saga_state", "saga_step",
    "fit_exponential_rate", "fit_power_law", "theoretical_step_and_rate",
    "TransportInstance", "DiffusionInstance", "lipschitz_constants", "make_instance",
    "QuadratureRule", "SamplingDistribution", "gauss_legendre", "tensor_gauss_legendre",
    "expectation", "draw_index", "s_tilde",
]
