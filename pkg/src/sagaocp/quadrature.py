"""Quadrature rules over the parameter box and the discrete expectation.

All weights are normalized against the uniform probability measure on the
box, so that ``sum(weights) == 1`` and ``expectation(rule, 1) == 1``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "UnivariateRule",
    "QuadratureRule",
    "SamplingDistribution",
    "gauss_legendre",
    "tensorize",
    "tensor_gauss_legendre",
    "monte_carlo_rule",
    "expectation",
    "weighted_sum",
    "s_tilde",
    "draw_index",
    "rule_to_json",
    "rule_from_json",
]

DEFAULT_NODE_CAP = 10**7
MAX_DIMENSION = 16


@dataclass(frozen=True)
class UnivariateRule:
    """q-point Gauss-Legendre rule on [-1, 1], probability-normalized."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def degree(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class QuadratureRule:
    """Weighted point set ``{(eta_j, zeta_j)}`` in an M-dimensional box.

    ``nodes`` has shape ``(n, M)``; ``box`` has shape ``(M, 2)`` with the
    lower and upper end of each coordinate interval.
    """

    nodes: np.ndarray
    weights: np.ndarray
    box: np.ndarray

    def __post_init__(self):
        for arr in (self.nodes, self.weights, self.box):
            arr.setflags(write=False)

    @property
    def dimension(self) -> int:
        return self.nodes.shape[1]

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class SamplingDistribution:
    """Discrete law on ``{0, ..., n-1}`` used to draw the sample index."""

    probabilities: np.ndarray
    cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probabilities must be a non-empty 1d array")
        if np.any(p <= 0) or not np.all(np.isfinite(p)):
            raise ValueError("sampling probabilities must be strictly positive")
        if abs(p.sum() - 1.0) > 1e-13:
            raise ValueError(f"sampling probabilities sum to {p.sum()!r}, not 1")
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        p.setflags(write=False)
        cdf.setflags(write=False)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "cumulative", cdf)

    @property
    def n(self) -> int:
        return self.probabilities.size

    @classmethod
    def uniform(cls, n: int) -> "SamplingDistribution":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def from_weights(cls, weights) -> "SamplingDistribution":
        """Importance distribution equal to the (positive) quadrature weights."""
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())


def _legendre_and_derivative(q: int, x: np.ndarray):
    # three-term recurrence; returns P_q(x) and P_q'(x)
    p0 = np.ones_like(x)
    p1 = x.copy()
    if q == 0:
        return p0, np.zeros_like(x)
    for k in range(2, q + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = q * (x * p1 - p0) / (x * x - 1.0)
    return p1, dp


def gauss_legendre(q: int, tol: float = 1e-15, max_iter: int = 100) -> UnivariateRule:
    """Gauss-Legendre nodes and probability weights on [-1, 1].

    Nodes are the roots of the degree-``q`` Legendre polynomial, found by
    Newton iteration started from the Tricomi asymptotic approximation.
    Weights are the classical ones divided by 2 so they sum to one.

    Parameters
    ----------
    q : int
        Number of nodes, ``q >= 1``.
    tol : float
        Newton step tolerance.
    max_iter : int
        Maximum number of Newton iterations.

    Returns
    -------
    UnivariateRule
        Nodes in increasing order and their weights.
    """
    q = int(q)
    if q < 1:
        raise ValueError(f"Gauss-Legendre degree must be >= 1, got {q}")
    if q == 1:
        return UnivariateRule(np.array([0.0]), np.array([1.0]))

    k = np.arange(1, q + 1)
    theta = np.pi * (4 * k - 1) / (4 * q + 2)
    x = np.cos(theta) * (1 - (q - 1) / (8.0 * q**3))
    for _ in range(max_iter):
        p, dp = _legendre_and_derivative(q, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) <= tol:
            break
    else:
        raise RuntimeError(f"Newton iteration for Gauss-Legendre q={q} did not converge")
    _, dp = _legendre_and_derivative(q, x)
    w = 1.0 / ((1.0 - x * x) * dp * dp)  # Lebesgue weight 2/(...) halved

    order = np.argsort(x)
    x, w = x[order], w[order]
    # enforce exact symmetry
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    if q % 2 == 1:
        x[q // 2] = 0.0
    w = w / w.sum()
    return UnivariateRule(x, w)


def _as_box(box, dimension: int) -> np.ndarray:
    if box is None:
        box = [(-1.0, 1.0)] * dimension
    box = np.asarray(box, dtype=float)
    if box.ndim == 1:
        box = np.tile(box, (dimension, 1))
    if box.shape != (dimension, 2):
        raise ValueError(f"box must have shape ({dimension}, 2), got {box.shape}")
    if np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box intervals must have positive length")
    return box


def tensorize(per_dim: Sequence[UnivariateRule], box=None, cap: int = DEFAULT_NODE_CAP) -> QuadratureRule:
    """Full tensor product of univariate rules.

    Global numbering is the lexicographic flattening of the multi-index with
    the last dimension running fastest. Nodes on [-1, 1] are mapped affinely
    into ``box``; weights are unaffected since they are probability weights.
    """
    M = len(per_dim)
    if not 1 <= M <= MAX_DIMENSION:
        raise ValueError(f"dimension must be between 1 and {MAX_DIMENSION}, got {M}")
    n = int(np.prod([r.degree for r in per_dim], dtype=object))
    if n > cap:
        raise ValueError(f"tensor rule would have {n} nodes, exceeding the cap {cap}")
    box = _as_box(box, M)

    grids = np.meshgrid(*[r.nodes for r in per_dim], indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=1)
    wgrids = np.meshgrid(*[r.weights for r in per_dim], indexing="ij")
    weights = np.prod(np.stack([g.reshape(-1) for g in wgrids], axis=1), axis=1)

    lo, hi = box[:, 0], box[:, 1]
    nodes = lo + 0.5 * (nodes + 1.0) * (hi - lo)
    return QuadratureRule(nodes, weights, box)


def tensor_gauss_legendre(q, dimension: int | None = None, box=None,
                          cap: int = DEFAULT_NODE_CAP) -> QuadratureRule:
    """Tensor Gauss-Legendre rule; ``q`` is an int (isotropic) or a sequence."""
    if np.isscalar(q):
        if dimension is None:
            raise ValueError("dimension is required when q is a scalar")
        q = [int(q)] * dimension
    return tensorize([gauss_legendre(qk) for qk in q], box=box, cap=cap)


def monte_carlo_rule(n: int, seed, box=None, dimension: int | None = None) -> QuadratureRule:
    """``n`` i.i.d. uniform draws in the box with equal weights ``1/n``."""
    if n < 1:
        raise ValueError("Monte Carlo rule needs at least one node")
    if box is None:
        box = _as_box(None, dimension or 1)
    else:
        box = np.asarray(box, dtype=float)
        box = _as_box(box, box.shape[0] if box.ndim == 2 else (dimension or 1))
    rng = np.random.default_rng(seed)
    u = rng.random((n, box.shape[0]))
    nodes = box[:, 0] + u * (box[:, 1] - box[:, 0])
    return QuadratureRule(nodes, np.full(n, 1.0 / n), box)


def weighted_sum(weights: Sequence[float], items) -> np.ndarray | float:
    """Compensated (Kahan) sum of ``weights[j] * items[j]`` in ascending ``j``.

    ``items`` may be an iterable of scalars or arrays. This is the single
    summation routine behind every weighted average in the package, so that
    two quantities built from the same terms agree bit for bit.
    """
    total = None
    comp = None
    for w, x in zip(weights, items):
        term = w * np.asarray(x, dtype=float)
        if total is None:
            total = term.copy()
            comp = np.zeros_like(total)
            continue
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
    if total is None:
        raise ValueError("weighted_sum of an empty sequence")
    return total if total.ndim else float(total)


def expectation(rule: QuadratureRule, X) -> float | np.ndarray:
    """Discrete expectation ``sum_j zeta_j X(eta_j)``.

    ``X`` is either a callable evaluated at each node or a sequence of
    precomputed values (scalars or arrays), one per node.
    """
    if callable(X):
        values = (X(eta) for eta in rule.nodes)
    else:
        values = X
        if len(values) != rule.n:
            raise ValueError(f"expected {rule.n} values, got {len(values)}")
    return weighted_sum(rule.weights, values)


def s_tilde(rule: QuadratureRule, dist: SamplingDistribution) -> float:
    """Variance-control quantity ``sum_j zeta_j**2 / zeta_tilde_j``."""
    if dist.n != rule.n:
        raise ValueError(f"length mismatch: rule has {rule.n} nodes, distribution {dist.n}")
    return float(np.sum(rule.weights**2 / dist.probabilities))


def draw_index(dist: SamplingDistribution, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of one index (0-based) from ``dist``."""
    return int(np.searchsorted(dist.cumulative, rng.random(), side="right"))


def rule_to_json(rule: QuadratureRule) -> str:
    """JSON document with 17-significant-digit decimal strings."""
    fmt = lambda v: format(float(v), ".17g")  # noqa: E731
    doc = {
        "dimension": rule.dimension,
        "box": [[fmt(a), fmt(b)] for a, b in rule.box],
        "nodes": [[fmt(v) for v in row] for row in rule.nodes],
        "weights": [fmt(v) for v in rule.weights],
    }
    return json.dumps(doc)


def rule_from_json(text: str) -> QuadratureRule:
    doc = json.loads(text)
    nodes = np.array([[float(v) for v in row] for row in doc["nodes"]], dtype=float)
    nodes = nodes.reshape(-1, int(doc["dimension"]))
    weights = np.array([float(v) for v in doc["weights"]])
    box = np.array([[float(a), float(b)] for a, b in doc["box"]])
    return QuadratureRule(nodes, weights, box)

