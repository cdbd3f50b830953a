"""Optimizers for the discrete OCP: CG, SG-IS and SAGA-IS.

Every trace measures errors in the L2(D) norm against a reference control
and counts PDE solves, so that methods can be compared at equal work.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .fem import load_checkpoint, save_checkpoint
from .ocp import DiscreteOcp
from .quadrature import SamplingDistribution, draw_index, weighted_sum

__all__ = [
    "CgConfig",
    "SgConfig",
    "SagaConfig",
    "IterTrace",
    "CgResult",
    "SagaState",
    "DivergenceError",
    "CurvatureError",
    "solve_cg",
    "run_sg_is",
    "init_saga_state",
    "saga_step",
    "run_saga_is",
    "q_k_diagnostic",
    "theoretical_step_and_rate",
    "RateFit",
    "fit_exponential_rate",
    "fit_power_law",
    "save_saga_state",
    "load_saga_state",
]

DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    """Raised when the iterate norm exceeds the divergence guard.

    The partial trace is attached as ``trace``.
    """

    def __init__(self, trace: "IterTrace", k: int, norm: float, threshold: float):
        super().__init__(f"iterate norm {norm:.3e} exceeded {threshold:.3e} at iteration {k}")
        self.trace = trace
        self.k = k


class CurvatureError(RuntimeError):
    pass


@dataclass
class CgConfig:
    tol_grad: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        if not self.tol_grad > 0:
            raise ValueError("tol_grad must be positive")


@dataclass
class SgConfig:
    """Robbins-Monro schedule ``tau_k = tau0 / k``, ``k >= 1``."""

    tau0: float = 10.0
    k_max: int = 1000
    seed: int | None = 0
    sampling: SamplingDistribution | None = None
    record_every: int = 1

    def __post_init__(self):
        if not self.tau0 > 0:
            raise ValueError("tau0 must be positive")

    def satisfies_rate_condition(self, l: float) -> bool:
        """Whether ``tau0 > 1/l``, the sufficient condition for the ``1/k`` rate."""
        return self.tau0 > 1.0 / l


@dataclass
class SagaConfig:
    tau: float = 10.0
    k_max: int = 1000
    seed: int | None = 0
    sampling: SamplingDistribution | None = None
    init_policy: str = "sweep"
    diagnostic: bool = False
    record_every: int = 1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.init_policy not in ("sweep", "zero"):
            raise ValueError(f"unknown memory initialization {self.init_policy!r}")


@dataclass
class IterTrace:
    """Per-iteration records; ``err_l2`` is NaN when no reference was given."""

    k: list = field(default_factory=list)
    err_l2: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    qk: list = field(default_factory=list)
    pde_solves: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    stop_reason: str = ""

    def record(self, k, err=np.nan, objective=np.nan, qk=np.nan, solves=0, wall_ms=0.0):
        if self.k and k <= self.k[-1]:
            raise ValueError("iteration counter must increase")
        self.k.append(int(k))
        self.err_l2.append(float(err))
        self.objective.append(float(objective))
        self.qk.append(float(qk))
        self.pde_solves.append(int(solves))
        self.wall_ms.append(float(wall_ms))

    def __len__(self):
        return len(self.k)

    def arrays(self) -> dict:
        return {name: np.asarray(getattr(self, name)) for name in
                ("k", "err_l2", "objective", "qk", "pde_solves", "wall_ms")}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "err_l2", "objective", "qk", "pde_solves", "wall_ms"])
            for row in zip(self.k, self.err_l2, self.objective, self.qk, self.pde_solves,
                           self.wall_ms):
                w.writerow([row[0]] + [repr(v) for v in row[1:4]] + [row[4], f"{row[5]:.3f}"])

    def error_at_budget(self, solves: int) -> float:
        """Error of the last recorded iterate whose solve count is ``<= solves``."""
        counts = np.asarray(self.pde_solves)
        idx = np.searchsorted(counts, solves, side="right") - 1
        if idx < 0:
            raise ValueError(f"no iterate available within {solves} solves")
        return self.err_l2[idx]


@dataclass
class CgResult:
    u: np.ndarray
    trace: IterTrace
    iterations: int
    grad_norm: float


class _Clock:
    def __init__(self):
        self.t0 = time.perf_counter()

    def ms(self):
        return 1e3 * (time.perf_counter() - self.t0)


def _error(ocp, u, u_ref):
    return np.nan if u_ref is None else ocp.norm(u - u_ref)


def solve_cg(ocp: DiscreteOcp, cfg: CgConfig | None = None, u0=None, u_ref=None,
             max_restarts: int = 3) -> CgResult:
    """Conjugate gradients on ``H u = -grad J(0)`` in the L2 inner product.

    The initial gradient costs 2n PDE solves and every iteration applies the
    reduced Hessian once (2n solves). On exit the true gradient is
    recomputed; if recursive-residual drift left it above ``tol_grad`` the
    iteration is restarted from the current iterate.
    """
    cfg = cfg or CgConfig()
    u = ocp.zeros() if u0 is None else np.array(u0, dtype=float)
    trace = IterTrace()
    clock = _Clock()
    solves = 0
    n = ocp.n

    g = ocp.full_gradient(u)
    solves += 2 * n
    trace.record(0, _error(ocp, u, u_ref), solves=solves, wall_ms=clock.ms())
    it = 0
    for _restart in range(max_restarts + 1):
        r = -g
        p = r.copy()
        rr = ocp.inner(r, r)
        while np.sqrt(rr) > cfg.tol_grad:
            if it >= cfg.max_iter:
                raise RuntimeError(f"CG did not reach |grad| <= {cfg.tol_grad:g} in "
                                   f"{cfg.max_iter} iterations (|r| = {np.sqrt(rr):.3e})")
            Hp = ocp.hessian_apply(p)
            solves += 2 * n
            curv = ocp.inner(p, Hp)
            pp = ocp.inner(p, p)
            if curv <= 0 or curv < ocp.beta * pp * (1 - 1e-8):
                raise CurvatureError(f"reduced Hessian curvature {curv:.3e} below "
                                     f"beta |p|^2 = {ocp.beta * pp:.3e}")
            alpha = rr / curv
            u = u + alpha * p
            r = r - alpha * Hp
            rr_new = ocp.inner(r, r)
            p = r + (rr_new / rr) * p
            rr = rr_new
            it += 1
            trace.record(it, _error(ocp, u, u_ref), qk=np.sqrt(rr), solves=solves,
                         wall_ms=clock.ms())
        g = ocp.full_gradient(u)
        if ocp.norm(g) <= cfg.tol_grad:
            break
    grad_norm = ocp.norm(g)
    trace.stop_reason = "converged" if grad_norm <= cfg.tol_grad else "residual drift"
    return CgResult(u, trace, it, grad_norm)


def _guard(ocp, u, threshold, trace, k):
    nu = ocp.norm(u)
    if not np.isfinite(nu) or nu > threshold:
        trace.stop_reason = "diverged"
        raise DivergenceError(trace, k, nu, threshold)


def _error_function(ocp, u_ref, error_fn):
    if error_fn is not None:
        return error_fn
    return lambda u: _error(ocp, u, u_ref)


def run_sg_is(ocp: DiscreteOcp, cfg: SgConfig, u0=None, u_ref=None,
              error_fn=None) -> IterTrace:
    """Stochastic gradient with importance sampling and ``tau_k = tau0/k``.

    ``u_{k+1} = u_k - tau_k (zeta_i / zeta_tilde_i) grad f_i(u_k)`` with
    ``i ~ zeta_tilde`` drawn independently at each step. ``error_fn``, if
    given, replaces the default error ``|u - u_ref|`` in the trace.
    """
    err = _error_function(ocp, u_ref, error_fn)
    dist = cfg.sampling or SamplingDistribution.uniform(ocp.n)
    if dist.n != ocp.n:
        raise ValueError("sampling distribution does not match the number of nodes")
    rng = np.random.default_rng(cfg.seed)
    u = ocp.zeros() if u0 is None else np.array(u0, dtype=float)
    threshold = DIVERGENCE_FACTOR * (1.0 + ocp.norm(u))
    ratio = ocp.weights / dist.probabilities
    trace = IterTrace()
    clock = _Clock()
    solves = 0
    trace.record(0, err(u), solves=0, wall_ms=0.0)
    for k in range(1, cfg.k_max + 1):
        i = draw_index(dist, rng)
        g = ocp.per_sample_gradient(u, i)
        solves += 2
        u = u - (cfg.tau0 / k) * ratio[i] * g
        _guard(ocp, u, threshold, trace, k)
        if k % cfg.record_every == 0 or k == cfg.k_max:
            trace.record(k, err(u), solves=solves, wall_ms=clock.ms())
    trace.stop_reason = "k_max"
    trace.u = u
    return trace


@dataclass
class SagaState:
    """Iterate, gradient memory and running weighted sum of SAGA-IS.

    ``grads[j]`` stores ``grad f_j(phi_j)`` and ``G = sum_j zeta_j grads[j]``.
    In diagnostic mode the controls ``phi[j]`` are kept as well.
    """

    u: np.ndarray
    grads: np.ndarray
    G: np.ndarray
    tau: float
    sampling: SamplingDistribution
    rng: np.random.Generator
    k: int = 0
    solves: int = 0
    phi: np.ndarray | None = None
    qk_terms: np.ndarray | None = None
    grads_star: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.grads.shape[0]

    def memory_sum(self, weights) -> np.ndarray:
        """``sum_j zeta_j grads[j]`` recomputed from the stored gradients."""
        return weighted_sum(weights, self.grads)


def init_saga_state(ocp: DiscreteOcp, cfg: SagaConfig, u0=None) -> SagaState:
    """Initial memory: a full sweep ``grads[j] = grad f_j(u0)`` (2n solves)
    or all zeros with ``G = 0``."""
    dist = cfg.sampling or SamplingDistribution.uniform(ocp.n)
    if dist.n != ocp.n:
        raise ValueError("sampling distribution does not match the number of nodes")
    u = ocp.zeros() if u0 is None else np.array(u0, dtype=float)
    grads = np.zeros((ocp.n, ocp.N))
    solves = 0
    if cfg.init_policy == "sweep":
        for j in range(ocp.n):
            grads[j] = ocp.per_sample_gradient(u, j)
        solves = 2 * ocp.n
        G = weighted_sum(ocp.weights, grads)
    else:
        G = np.zeros(ocp.N)
    phi = np.tile(u, (ocp.n, 1)) if cfg.diagnostic else None
    return SagaState(u, grads, G, float(cfg.tau), dist, np.random.default_rng(cfg.seed),
                     0, solves, phi)


def saga_step(ocp: DiscreteOcp, state: SagaState) -> int:
    """One SAGA-IS iteration in place; returns the drawn index."""
    i = draw_index(state.sampling, state.rng)
    zi = ocp.weights[i]
    g = ocp.per_sample_gradient(state.u, i)
    state.solves += 2
    diff = g - state.grads[i]
    step = diff * (zi / state.sampling.probabilities[i]) + state.G
    if state.phi is not None:
        state.phi[i] = state.u
    if state.qk_terms is not None:
        d = g - state.grads_star[i]
        state.qk_terms[i] = zi**2 / state.sampling.probabilities[i] * ocp.inner(d, d)
    state.u = state.u - state.tau * step
    state.G = state.G + zi * diff
    state.grads[i] = g
    state.k += 1
    return i


def q_k_diagnostic(ocp: DiscreteOcp, state: SagaState, u_star=None, grads_star=None) -> float:
    """``Q_k = sum_j zeta_j^2 / zeta_tilde_j |grad f_j(phi_j) - grad f_j(u*)|^2``."""
    if grads_star is None:
        if u_star is None:
            raise ValueError("either u_star or grads_star is required")
        grads_star = np.array([ocp.per_sample_gradient(u_star, j) for j in range(ocp.n)])
    d = state.grads - grads_star
    sq = np.einsum("jn,jn->j", d, (ocp.mass @ d.T).T)
    return float(np.sum(ocp.weights**2 / state.sampling.probabilities * sq))


def run_saga_is(ocp: DiscreteOcp, cfg: SagaConfig, u0=None, u_ref=None,
                state: SagaState | None = None, error_fn=None) -> IterTrace:
    """SAGA with importance sampling, stored-gradient form.

    Per iteration: draw ``i``, compute ``grad f_i(u_k)`` (2 solves), step
    with ``(grad f_i(u_k) - grads[i]) zeta_i / zeta_tilde_i + G``, then
    overwrite ``grads[i]`` and update ``G`` incrementally.

    Passing an existing ``state`` resumes from it. With ``cfg.diagnostic``
    and a reference ``u_ref`` the Lyapunov quantity ``Q_k`` is tracked in
    the ``qk`` column (the per-node optimal gradients are computed once
    and not charged to the solve count). The final state is attached to the
    returned trace as ``trace.state``. ``error_fn`` overrides the error
    measure, e.g. to compare against a reference on another mesh.
    """
    err = _error_function(ocp, u_ref, error_fn)
    if state is None:
        state = init_saga_state(ocp, cfg, u0)
    threshold = DIVERGENCE_FACTOR * (1.0 + ocp.norm(state.u))
    track_q = cfg.diagnostic and u_ref is not None
    if track_q and state.qk_terms is None:
        before = ocp.solve_count
        state.grads_star = np.array([ocp.per_sample_gradient(u_ref, j) for j in range(ocp.n)])
        ocp.solve_count = before
        d = state.grads - state.grads_star
        sq = np.einsum("jn,jn->j", d, (ocp.mass @ d.T).T)
        state.qk_terms = ocp.weights**2 / state.sampling.probabilities * sq

    def qk():
        return float(np.sum(state.qk_terms)) if track_q else np.nan

    trace = IterTrace()
    trace.state = state
    clock = _Clock()
    trace.record(state.k, err(state.u), qk=qk(), solves=state.solves, wall_ms=0.0)
    k_end = state.k + cfg.k_max
    while state.k < k_end:
        saga_step(ocp, state)
        _guard(ocp, state.u, threshold, trace, state.k)
        if state.k % cfg.record_every == 0 or state.k == k_end:
            trace.record(state.k, err(state.u), qk=qk(), solves=state.solves,
                         wall_ms=clock.ms())
    trace.stop_reason = "k_max"
    return trace


def theoretical_step_and_rate(l: float, L: float, S: float, n: int) -> dict:
    """Step bound, recommended step, rate and Lyapunov weight for SAGA-IS.

    ``tau_1 = l / (25 S L^2)``, ``tau = tau_1 / 2``,
    ``eps = min(l^2 / (100 S L^2), 1 / (2n))``, ``alpha = 16 n tau^2``.
    """
    if not (l > 0 and L > 0 and S > 0):
        raise ValueError("l, L and S must be positive")
    tau1 = l / (25.0 * S * L**2)
    tau = 0.5 * tau1
    eps = min(l**2 / (100.0 * S * L**2), 1.0 / (2.0 * n))
    return {"tau1": tau1, "tau": tau, "eps": eps, "alpha": 16.0 * n * tau**2}


@dataclass
class RateFit:
    E1: float
    eps: float
    slope: float
    intercept: float
    r2: float
    window: tuple


def _linear_fit(x, y):
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), float(r2)


def _ensemble(traces):
    if isinstance(traces, IterTrace):
        traces = [traces]
    ks = np.asarray(traces[0].k)
    errs = []
    for t in traces:
        if len(t.k) != len(ks) or np.any(np.asarray(t.k) != ks):
            raise ValueError("traces must share the same iteration grid")
        errs.append(np.asarray(t.err_l2))
    return ks, np.vstack(errs)


def fit_exponential_rate(traces, window=0.25, min_points: int = 10) -> RateFit:
    """Least-squares fit of ``log10 E|u_k - u_ref| = log10 E1 + k log10(1 - eps)``.

    ``traces`` is a list of :class:`IterTrace` on a common grid, or a pair
    ``(k, mean_error)``. ``window`` is either the fraction of initial
    iterations to skip or an explicit ``(k_start, k_stop)`` range.
    """
    if isinstance(traces, tuple) and len(traces) == 2 and not isinstance(traces[0], IterTrace):
        ks = np.asarray(traces[0], dtype=float)
        mean = np.asarray(traces[1], dtype=float)
    else:
        ks, errs = _ensemble(traces)
        ks = ks.astype(float)
        mean = errs.mean(axis=0)
    if isinstance(window, tuple):
        lo, hi = window
    else:
        lo, hi = ks[0] + window * (ks[-1] - ks[0]), ks[-1]
    sel = (ks >= lo) & (ks <= hi) & np.isfinite(mean) & (mean > 0)
    if sel.sum() < min_points:
        raise ValueError(f"fit window holds {sel.sum()} points, need at least {min_points}")
    a, b, r2 = _linear_fit(ks[sel], np.log10(mean[sel]))
    return RateFit(float(10.0**a), float(1.0 - 10.0**b), float(b), float(a), float(r2),
                   (float(lo), float(hi)))


def fit_power_law(k, values, k_range=None) -> tuple[float, float, float]:
    """Slope, intercept and R^2 of ``log10 values`` against ``log10 k``."""
    k = np.asarray(k, dtype=float)
    v = np.asarray(values, dtype=float)
    sel = (k > 0) & (v > 0)
    if k_range is not None:
        sel &= (k >= k_range[0]) & (k <= k_range[1])
    a, b, r2 = _linear_fit(np.log10(k[sel]), np.log10(v[sel]))
    return float(b), float(a), float(r2)


def save_saga_state(path, state: SagaState, weights=None) -> None:
    """Checkpoint a SAGA state (binary format shared with field exports)."""
    header = {
        "kind": "saga_state",
        "n": state.n,
        "k": state.k,
        "tau": state.tau,
        "solves": state.solves,
        "rng": state.rng.bit_generator.state,
    }
    arrays = {"u": state.u, "grads": state.grads, "G": state.G,
              "sampling": state.sampling.probabilities}
    if state.phi is not None:
        arrays["phi"] = state.phi
    save_checkpoint(path, header, arrays)


def load_saga_state(path) -> SagaState:
    header, arrays = load_checkpoint(path)
    if header.get("kind") != "saga_state":
        raise ValueError(f"{path} is not a SAGA checkpoint")
    rng = np.random.default_rng()
    state = header["rng"]
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    rng = np.random.Generator(bitgen)
    return SagaState(arrays["u"], arrays["grads"], arrays["G"], float(header["tau"]),
                     SamplingDistribution(arrays["sampling"]), rng, int(header["k"]),
                     int(header["solves"]), arrays.get("phi"))
