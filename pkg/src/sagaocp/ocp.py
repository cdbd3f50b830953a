"""Fully discrete optimal control problem.

The weighted finite-sum objective is

    J(u) = sum_j zeta_j f_j(u),
    f_j(u) = 1/2 |y_j(u) - z_d|^2 + beta/2 |u|^2,

where ``y_j(u)`` solves the state equation at quadrature node ``eta_j`` with
right-hand side ``M (f_j + sign * u)``. State and control live in the same
P1 space, so the L2 Riesz representative of the derivative of ``f_j`` is the
nodal field ``beta u + sign * p_j`` with ``p_j`` the adjoint state.
"""
from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .fem import (DiscreteSpace, OperatorMatrix, assemble_operator, build_space,
                  solve_adjoint, solve_linear)
from .problems import ProblemInstance, sample_coefficients
from .quadrature import QuadratureRule, weighted_sum

__all__ = [
    "DiscreteOcp",
    "GradientValidationError",
    "GradientReport",
    "validate_gradient",
    "random_smooth_field",
    "empirical_lipschitz",
]

DEFAULT_CACHE_BYTES = 1_500_000_000


class DiscreteOcp:
    """Discrete OCP over an instance, a P1 space and a positive-weight rule.

    Parameters
    ----------
    instance : ProblemInstance
    space : DiscreteSpace or int
        Either a prebuilt space or the number of mesh subdivisions.
    rule : QuadratureRule
        Must live in the instance's parameter box and have positive weights.
    gradient_sign : int, optional
        Sign in front of the adjoint in the gradient. Defaults to the
        instance's control sign, which is what the chain rule gives.
    cache_bytes : int
        Upper bound on memory held by cached per-node operators and LU
        factors; least recently used entries are dropped beyond it.
    """

    def __init__(self, instance: ProblemInstance, space, rule: QuadratureRule,
                 gradient_sign: int | None = None, cache_bytes: int = DEFAULT_CACHE_BYTES,
                 method: str = "lu"):
        if not isinstance(space, DiscreteSpace):
            space = build_space(int(space), instance.dirichlet)
        if rule.dimension != instance.dimension or not np.allclose(rule.box, instance.box):
            raise ValueError("quadrature rule box does not match the instance parameter box")
        if np.any(rule.weights <= 0):
            raise ValueError("quadrature rules with non-positive weights are not supported")
        self.instance = instance
        self.space = space
        self.rule = rule
        self.beta = instance.beta
        self.control_sign = int(instance.control_sign)
        self.gradient_sign = self.control_sign if gradient_sign is None else int(gradient_sign)
        self.method = method
        self.cache_bytes = int(cache_bytes)
        self.mass = space.mass
        self.target = space.interpolate(instance.target)
        self.target_load = self.mass @ self.target
        self._cache: OrderedDict[int, tuple[OperatorMatrix, np.ndarray]] = OrderedDict()
        self._cache_size = 0
        self._lock = threading.Lock()
        self.solve_count = 0
        self._grad_zero = None

    # -- bookkeeping -------------------------------------------------------
    @property
    def n(self) -> int:
        return self.rule.n

    @property
    def N(self) -> int:
        return self.space.N

    @property
    def weights(self) -> np.ndarray:
        return self.rule.weights

    def zeros(self) -> np.ndarray:
        return np.zeros(self.N)

    def inner(self, u, v) -> float:
        return float(u @ (self.mass @ v))

    def norm(self, u) -> float:
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    def _count(self, k: int = 1):
        with self._lock:
            self.solve_count += k

    def sample(self, j: int) -> tuple[OperatorMatrix, np.ndarray]:
        """Operator and source load ``M f_j`` at node ``j`` (cached)."""
        with self._lock:
            hit = self._cache.get(j)
            if hit is not None:
                self._cache.move_to_end(j)
                return hit
        coeffs = sample_coefficients(self.instance, self.rule.nodes[j])
        op = assemble_operator(self.space, coeffs.diffusivity, coeffs.velocity, self.method)
        load = self.mass @ self.space.interpolate(coeffs.source)
        if self.method == "lu":
            op.factor()
        size = op.factor_nbytes() + 12 * (op.raw.nnz + op.matrix.nnz) + load.nbytes
        with self._lock:
            if j not in self._cache:
                self._cache[j] = (op, load)
                self._cache_size += size
                while self._cache_size > self.cache_bytes and len(self._cache) > 1:
                    _, (old, old_load) = self._cache.popitem(last=False)
                    self._cache_size -= (old.factor_nbytes() + 12 * (old.raw.nnz + old.matrix.nnz)
                                         + old_load.nbytes)
            return self._cache[j]

    # -- per-sample quantities ---------------------------------------------
    def state(self, u, j: int, with_source: bool = True) -> np.ndarray:
        op, load = self.sample(j)
        rhs = self.control_sign * (self.mass @ u)
        if with_source:
            rhs = rhs + load
        self._count()
        return solve_linear(op, rhs)

    def adjoint(self, y, j: int, with_target: bool = True) -> np.ndarray:
        op, _ = self.sample(j)
        misfit = y - self.target if with_target else y
        self._count()
        return solve_adjoint(op, self.mass @ misfit)

    def per_sample_loss(self, u, j: int) -> float:
        y = self.state(u, j)
        r = y - self.target
        return 0.5 * self.inner(r, r) + 0.5 * self.beta * self.inner(u, u)

    def per_sample_gradient(self, u, j: int) -> np.ndarray:
        """``beta u + sign * p_j(u)``: one state and one adjoint solve."""
        y = self.state(u, j)
        p = self.adjoint(y, j)
        return self.beta * u + self.gradient_sign * p

    # -- weighted sums ------------------------------------------------------
    def objective(self, u) -> float:
        return weighted_sum(self.weights, (self.per_sample_loss(u, j) for j in range(self.n)))

    def full_gradient(self, u) -> np.ndarray:
        return weighted_sum(self.weights, (self.per_sample_gradient(u, j) for j in range(self.n)))

    def gradient_at_zero(self) -> np.ndarray:
        """``grad J(0)``, cached; its solves are counted the first time."""
        if self._grad_zero is None:
            self._grad_zero = self.full_gradient(self.zeros())
        return self._grad_zero.copy()

    def hessian_apply(self, v) -> np.ndarray:
        """Constant reduced Hessian of ``J`` applied to ``v`` (2n solves)."""
        v = np.asarray(v, dtype=float)

        def term(j):
            y = self.state(v, j, with_source=False)
            p = self.adjoint(y, j, with_target=False)
            return self.gradient_sign * p

        misfit = weighted_sum(self.weights, (term(j) for j in range(self.n)))
        return self.beta * v + misfit


def random_smooth_field(space: DiscreteSpace, rng: np.random.Generator, modes: int = 4,
                        noise: float = 0.1) -> np.ndarray:
    """Random combination of low cosine modes plus a little nodal noise."""
    x = space.mesh.vertices
    u = np.zeros(space.N)
    for a in range(modes):
        for b in range(modes):
            c = rng.standard_normal()
            u += c / (1 + a + b) ** 2 * np.cos(a * np.pi * x[:, 0]) * np.cos(b * np.pi * x[:, 1])
    return u + noise * rng.standard_normal(space.N)


class GradientValidationError(AssertionError):
    def __init__(self, report: "GradientReport"):
        super().__init__(f"gradient check failed: worst relative error "
                         f"{report.max_error[report.configured_sign]:.3e} at {report.worst}")
        self.report = report


@dataclass
class GradientReport:
    configured_sign: int
    max_error: dict
    passing_signs: list
    worst: dict = field(default_factory=dict)
    tolerance: float = 1e-5

    @property
    def ok(self) -> bool:
        return self.configured_sign in self.passing_signs


def validate_gradient(ocp: DiscreteOcp, trials: int = 10, seed=0, step: float = 1e-5,
                      tolerance: float = 1e-5, raise_on_failure: bool = True) -> GradientReport:
    """Central-difference check of the adjoint gradient on random triples.

    Both candidate adjoint signs are tested; the report lists which of them
    reproduce the finite-difference derivative. Raises if the configured
    sign does not.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    errors = {+1: 0.0, -1: 0.0}
    worst = {}
    for t in range(trials):
        u = random_smooth_field(ocp.space, rng)
        du = random_smooth_field(ocp.space, rng)
        j = int(rng.integers(ocp.n))
        fd = (ocp.per_sample_loss(u + step * du, j) - ocp.per_sample_loss(u - step * du, j)) / (2 * step)
        y = ocp.state(u, j)
        p = ocp.adjoint(y, j)
        for s in (+1, -1):
            g = ocp.beta * u + s * p
            an = ocp.inner(g, du)
            err = abs(an - fd) / max(abs(fd), 1e-300)
            if err > errors[s]:
                errors[s] = err
                if s == ocp.gradient_sign:
                    worst = {"trial": t, "j": j, "fd": fd, "adjoint": an}
    passing = [s for s in (+1, -1) if errors[s] <= tolerance]
    report = GradientReport(ocp.gradient_sign, errors, passing, worst, tolerance)
    if raise_on_failure and not report.ok:
        raise GradientValidationError(report)
    return report



def empirical_lipschitz(ocp: DiscreteOcp, pairs: int = 20, power_iterations: int = 30,
                        nodes=None, seed=0) -> dict:
    """Sampled Lipschitz constants of the per-node gradients.

    ``ratio`` is the largest ``|grad f_j(u1) - grad f_j(u2)| / |u1 - u2|``
    over random smooth pairs; ``power`` refines each pair direction by power
    iteration on the (self-adjoint, constant) per-node Hessian, which drives
    the ratio to its supremum. ``L`` is the larger of the two.
    """
    rng = np.random.default_rng(seed)
    nodes = list(range(ocp.n)) if nodes is None else list(nodes)
    per_node = max(1, -(-pairs // len(nodes)))
    best_ratio = 0.0
    best_power = 0.0

    def hess(v, j):
        y = ocp.state(v, j, with_source=False)
        return ocp.beta * v + ocp.gradient_sign * ocp.adjoint(y, j, with_target=False)

    for j in nodes:
        for _ in range(per_node):
            u1 = random_smooth_field(ocp.space, rng)
            u2 = random_smooth_field(ocp.space, rng)
            d = u1 - u2
            g = ocp.per_sample_gradient(u1, j) - ocp.per_sample_gradient(u2, j)
            best_ratio = max(best_ratio, ocp.norm(g) / ocp.norm(d))
        v = random_smooth_field(ocp.space, rng)
        v /= ocp.norm(v)
        lam = 0.0
        for _ in range(power_iterations):
            w = hess(v, j)
            lam = ocp.norm(w)
            v = w / lam
        best_power = max(best_power, lam)
    return {"ratio": best_ratio, "power": best_power, "L": max(best_ratio, best_power)}
