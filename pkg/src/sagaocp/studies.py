"""Numerical studies on the transport OCP and the complexity driver.

Each ``study_*`` function takes a :class:`StudyConfig`, runs its
experiment and returns a :class:`StudyResult` holding one or more tables
(lists of row dicts) plus fitted constants. :func:`write_result` turns a
result into ``<study>_<param>.csv`` files and a ``manifest.json``.

Everything random is derived from ``StudyConfig.seed`` through
``numpy.random.SeedSequence``, and no timing enters the CSV files, so the
same configuration and seed reproduce identical outputs.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fem import build_space, prolongate
from .ocp import DiscreteOcp
from .optim import (CgConfig, DivergenceError, SagaConfig, SgConfig, fit_exponential_rate,
                    fit_power_law, run_saga_is, run_sg_is, solve_cg)
from .problems import ProblemInstance, make_instance
from .quadrature import SamplingDistribution, tensor_gauss_legendre

__all__ = [
    "StudyConfig",
    "StudyResult",
    "CalibratedModel",
    "InfeasibleToleranceError",
    "spawn_seeds",
    "reference_control",
    "study_quadrature",
    "study_fe",
    "study_saga_rate",
    "study_step_sensitivity",
    "study_saga_vs_cg",
    "study_sg_rate",
    "calibrate",
    "complexity_plan",
    "complexity_driver",
    "write_result",
    "STUDIES",
]


@dataclass
class StudyConfig:
    """Settings shared by all studies; JSON keys mirror the field names.

    ``overrides`` maps a study name to a dict of field values used only by
    that study, e.g. ``{"saga-vs-cg": {"m": 16}}``.
    """

    instance: str = "transport"
    instance_overrides: dict = field(default_factory=dict)
    m: int = 8
    q: int = 2
    m_list: list = field(default_factory=lambda: [2, 4, 8, 16, 32])
    m_ref: int | None = None
    q_list: list = field(default_factory=lambda: [1, 2, 3, 4])
    q_ref: int | None = None
    tau: float = 10.0
    tau_list: list = field(default_factory=lambda: [0.01, 0.1, 1.0, 5.0, 10.0, 100.0])
    tau0: float = 10.0
    k_max: int = 5000
    repetitions: int = 20
    seed: int = 0
    init_policy: str = "sweep"
    sampling: str = "uniform"
    window: float = 0.25
    record_every: int = 1
    cg_tol: float = 1e-12
    tol_list: list = field(default_factory=lambda: [1e-1, 10**-1.5, 1e-2])
    gamma: float = 3.0
    split: float = 3.0
    complexity_tau: float = 5.0
    q_cap: int = 8
    m_cap: int = 512
    out: str = "results"
    threads: int = 1
    overrides: dict = field(default_factory=lambda: {
        "saga-vs-cg": {"m": 16, "k_max": 600, "repetitions": 1},
        "step-sensitivity": {"repetitions": 5},
        "saga-rate": {"q_list": [1, 2, 3]},
        "sg-rate": {"k_max": 10000},
    })

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        for name in ("m_list", "q_list"):
            if any(int(v) < 1 for v in getattr(self, name)):
                raise ValueError(f"all entries of {name} must be positive")
        if self.m < 1 or self.q < 1 or self.k_max < 0:
            raise ValueError("m and q must be positive and k_max non-negative")
        if self.sampling not in ("uniform", "weights"):
            raise ValueError("sampling must be 'uniform' or 'weights'")

    @classmethod
    def from_dict(cls, doc: dict) -> "StudyConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "StudyConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def for_study(self, name: str) -> "StudyConfig":
        extra = self.overrides.get(name, {})
        return dataclasses.replace(self, **extra) if extra else self

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=float)
        return hashlib.sha256(text.encode()).hexdigest()

    def make_instance(self) -> ProblemInstance:
        return make_instance(self.instance, **self.instance_overrides)


@dataclass
class StudyResult:
    study: str
    tables: dict
    fit: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def spawn_seeds(master: int, count: int) -> list[int]:
    """Independent 64-bit child seeds of ``master``."""
    children = np.random.SeedSequence(int(master)).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- reference solutions ----------------------------------------------------

_REFERENCES: dict = {}


def _build_ocp(instance: ProblemInstance, m: int, q: int) -> DiscreteOcp:
    rule = tensor_gauss_legendre(q, instance.dimension, box=instance.box)
    return DiscreteOcp(instance, m, rule)


def reference_control(instance: ProblemInstance, m: int, q: int, tol: float = 1e-12,
                      key=None) -> tuple[DiscreteOcp, np.ndarray]:
    """CG solution of the (m, q) problem, memoized per process."""
    key = (key or instance.name, repr(sorted(vars(instance).items(), key=str)), m, q, tol)
    hit = _REFERENCES.get(key)
    if hit is not None:
        return hit
    ocp = _build_ocp(instance, m, q)
    res = solve_cg(ocp, CgConfig(tol_grad=tol))
    _REFERENCES[key] = (ocp, res.u)
    return ocp, res.u


def _sampling(cfg: StudyConfig, ocp: DiscreteOcp) -> SamplingDistribution:
    if cfg.sampling == "weights":
        return SamplingDistribution.from_weights(ocp.weights)
    return SamplingDistribution.uniform(ocp.n)


def _log_fit(x, y):
    A = np.column_stack([np.ones(len(x)), np.asarray(x, dtype=float)])
    (a, b), *_ = np.linalg.lstsq(A, np.asarray(y, dtype=float), rcond=None)
    return float(a), float(b)


# -- quadrature and FE studies ----------------------------------------------

def study_quadrature(cfg: StudyConfig) -> StudyResult:
    """Squared L2 control error at each q against a higher-q reference.

    Fits ``|u_q - u_ref|^2 ~ E2 * 10^(-s q)`` by least squares on log10.
    """
    inst = cfg.make_instance()
    q_list = sorted(int(q) for q in cfg.q_list)
    q_ref = cfg.q_ref or q_list[-1] + 2
    if q_ref <= q_list[-1]:
        raise ValueError("reference q must exceed every studied q")
    _, u_ref = reference_control(inst, cfg.m, q_ref, cfg.cg_tol)
    space = build_space(cfg.m, inst.dirichlet)
    rows = []
    for q in q_list:
        _, u = reference_control(inst, cfg.m, q, cfg.cg_tol)
        d = u - u_ref
        rows.append({"q": q, "n": q**inst.dimension, "err2": float(d @ (space.mass @ d))})
    pos = [r for r in rows if r["err2"] > 0]
    fit = {"q_ref": q_ref, "m": cfg.m}
    if len(pos) >= 2:
        a, b = _log_fit([r["q"] for r in pos], np.log10([r["err2"] for r in pos]))
        fit.update(E2=10.0**a, s=-b)
    for r0, r1 in zip(rows, rows[1:]):
        r1["log10_decrement"] = float(np.log10(r0["err2"] / r1["err2"]))
    return StudyResult("quadrature", {"q": rows}, fit)


def study_fe(cfg: StudyConfig) -> StudyResult:
    """Squared L2 control error on nested meshes against a fine-mesh solution.

    Uses ``q = 1``. Coarse controls are interpolated onto the reference
    mesh, where the error is measured. Fits ``err^2 ~ E3 h^4``.
    """
    inst = cfg.make_instance()
    m_list = sorted(int(m) for m in cfg.m_list)
    m_ref = cfg.m_ref or 4 * m_list[-1]
    if m_ref <= m_list[-1]:
        raise ValueError("reference mesh must be finer than every studied mesh")
    _, u_ref = reference_control(inst, m_ref, 1, cfg.cg_tol)
    fine = build_space(m_ref, inst.dirichlet)
    rows = []
    for m in m_list:
        if m_ref % m:
            raise ValueError(f"mesh m={m} is not nested in the reference m={m_ref}")
        ocp, u = reference_control(inst, m, 1, cfg.cg_tol)
        d = prolongate(ocp.space, u, fine) - u_ref
        rows.append({"m": m, "h": 1.0 / m, "err2": float(d @ (fine.mass @ d))})
    for r0, r1 in zip(rows, rows[1:]):
        r1["ratio"] = r0["err2"] / r1["err2"]
    logE3 = np.mean([np.log10(r["err2"]) - 4 * np.log10(r["h"]) for r in rows])
    return StudyResult("fe", {"h": rows}, {"E3": float(10.0**logE3), "m_ref": m_ref})


# -- SAGA and SG ensembles --------------------------------------------------

def _saga_ensemble(cfg: StudyConfig, ocp, u_ref, tau, seeds, k_max=None):
    """Run one SAGA trace per seed; diverged runs return the exception."""
    dist = _sampling(cfg, ocp)

    def one(seed):
        sc = SagaConfig(tau=tau, k_max=cfg.k_max if k_max is None else k_max, seed=seed,
                        sampling=dist, init_policy=cfg.init_policy,
                        record_every=cfg.record_every)
        try:
            return run_saga_is(ocp, sc, u_ref=u_ref)
        except DivergenceError as exc:
            return exc

    return _map(one, seeds, cfg.threads)


def study_saga_rate(cfg: StudyConfig) -> StudyResult:
    """Fitted SAGA contraction rate per q, compared with ``1/(2n)``.

    For each q the CG reference is computed, ``repetitions`` SAGA runs are
    averaged and ``log10`` of the mean error is fitted linearly in ``k``.
    """
    inst = cfg.make_instance()
    seeds = spawn_seeds(cfg.seed, cfg.repetitions)
    rows, traces = [], {}
    for q in sorted(int(q) for q in cfg.q_list):
        ocp, u_ref = reference_control(inst, cfg.m, q, cfg.cg_tol)
        runs = _saga_ensemble(cfg, ocp, u_ref, cfg.tau, seeds)
        bad = [r for r in runs if isinstance(r, DivergenceError)]
        eps_th = 1.0 / (2 * ocp.n)
        row = {"q": q, "n": ocp.n, "tau": cfg.tau, "eps_th": eps_th, "diverged": len(bad)}
        if bad:
            row.update(eps_est=math.nan, ratio=math.nan, E1=math.nan, r2=math.nan,
                       first_divergence=min(e.k for e in bad))
        else:
            fit = fit_exponential_rate(runs, cfg.window)
            row.update(eps_est=fit.eps, ratio=fit.eps / eps_th, E1=fit.E1, r2=fit.r2,
                       first_divergence=-1)
            k = np.asarray(runs[0].k)
            traces[f"q{q}"] = [{"k": int(kk), "mean_err": float(v)} for kk, v in
                              zip(k, np.mean([r.err_l2 for r in runs], axis=0))]
        rows.append(row)
    return StudyResult("saga-rate", {"q": rows, **{f"trace_{k}": v for k, v in traces.items()}},
                       seeds=seeds)


def study_step_sensitivity(cfg: StudyConfig) -> StudyResult:
    """Mean error traces of SAGA for each step in ``tau_list``.

    A run stopped by the divergence guard is recorded as an outcome with
    the iteration at which it happened.
    """
    inst = cfg.make_instance()
    seeds = spawn_seeds(cfg.seed, cfg.repetitions)
    ocp, u_ref = reference_control(inst, cfg.m, cfg.q, cfg.cg_tol)
    rows, tables = [], {}
    for tau in cfg.tau_list:
        runs = _saga_ensemble(cfg, ocp, u_ref, tau, seeds)
        bad = [r for r in runs if isinstance(r, DivergenceError)]
        row = {"tau": tau, "diverged": len(bad),
               "first_divergence": min((e.k for e in bad), default=-1)}
        if bad:
            row.update(outcome="diverged", eps_est=math.nan, contraction=math.nan,
                       r2=math.nan)
        else:
            ks = np.asarray(runs[0].k)
            mean = np.mean([r.err_l2 for r in runs], axis=0)
            fit = fit_exponential_rate((ks, mean), cfg.window)
            row.update(outcome="converged" if mean[-1] < mean[0] else "stalled",
                       eps_est=fit.eps, contraction=1.0 - fit.eps, r2=fit.r2)
            tables[f"tau={tau:g}"] = [{"k": int(k), "mean_err": float(v)}
                                      for k, v in zip(ks, mean)]
        rows.append(row)
    return StudyResult("step-sensitivity", {"tau": rows, **tables}, seeds=seeds)


def study_saga_vs_cg(cfg: StudyConfig) -> StudyResult:
    """Error against cumulative PDE solves for CG and SAGA from ``u0 = 0``.

    Both methods start by computing every per-node gradient at ``u0``
    (CG's initial residual, SAGA's memory sweep), so both traces begin at
    ``2n`` solves with the same error.
    """
    inst = cfg.make_instance()
    ocp, u_ref = reference_control(inst, cfg.m, cfg.q, cfg.cg_tol)
    seeds = spawn_seeds(cfg.seed, cfg.repetitions)
    cg = solve_cg(ocp, CgConfig(tol_grad=cfg.cg_tol), u_ref=u_ref)
    runs = _saga_ensemble(cfg, ocp, u_ref, cfg.tau, seeds)
    ok = [r for r in runs if not isinstance(r, DivergenceError)]
    if not ok:
        raise DivergenceError(runs[0].trace, runs[0].k, math.inf, math.inf)
    cg_rows = [{"pde_solves": s, "err": e} for s, e in zip(cg.trace.pde_solves, cg.trace.err_l2)]
    lengths = min(len(r.k) for r in ok)
    solves = np.asarray(ok[0].pde_solves[:lengths])
    mean = np.mean([r.err_l2[:lengths] for r in ok], axis=0)
    saga_rows = [{"pde_solves": int(s), "err": float(e)} for s, e in zip(solves, mean)]
    n = ocp.n
    summary = []
    for mult in (2, 4, 20, 22):
        budget = mult * n
        summary.append({
            "budget": budget, "budget_over_n": mult,
            "cg_err": cg.trace.error_at_budget(budget),
            "saga_err": float(mean[np.searchsorted(solves, budget, side="right") - 1])
            if budget <= solves[-1] else math.nan,
        })
    return StudyResult("saga-vs-cg", {"cg": cg_rows, "saga": saga_rows, "budget": summary},
                       {"n": n, "diverged": len(runs) - len(ok)}, seeds)


def study_sg_rate(cfg: StudyConfig) -> StudyResult:
    """Ensemble MSE of SG-IS with ``tau_k = tau0/k`` and its log-log slope."""
    inst = cfg.make_instance()
    ocp, u_ref = reference_control(inst, cfg.m, cfg.q, cfg.cg_tol)
    seeds = spawn_seeds(cfg.seed, cfg.repetitions)
    dist = _sampling(cfg, ocp)

    def one(seed):
        sc = SgConfig(tau0=cfg.tau0, k_max=cfg.k_max, seed=seed, sampling=dist,
                      record_every=cfg.record_every)
        try:
            return run_sg_is(ocp, sc, u_ref=u_ref)
        except DivergenceError as exc:
            return exc

    runs = _map(one, seeds, cfg.threads)
    bad = [r for r in runs if isinstance(r, DivergenceError)]
    fit = {"tau0": cfg.tau0, "diverged": len(bad)}
    rows = []
    if not bad:
        ks = np.asarray(runs[0].k)
        mse = np.mean([np.square(r.err_l2) for r in runs], axis=0)
        slope, intercept, r2 = fit_power_law(ks, mse, (1e2, 1e4))
        fit.update(slope=slope, intercept=intercept, r2=r2)
        rows = [{"k": int(k), "mse": float(v)} for k, v in zip(ks, mse)]
    return StudyResult("sg-rate", {"k": rows}, fit, seeds)


# -- complexity -------------------------------------------------------------

class InfeasibleToleranceError(ValueError):
    pass


@dataclass
class CalibratedModel:
    """Constants of the three-term error model (log base 10 for quadrature).

    ``MSE(k, q, h) ~ E1 (1 - eps(q))^k + E2 10^(-s q) + E3 h^4``.
    ``eps(q)`` is looked up in ``eps_table`` when measured at that q and
    otherwise taken as ``min(eps_cap, rate_factor / (2 q^M))``.
    """

    E1: float
    E2: float
    s: float
    E3: float
    dimension: int = 5
    eps_table: dict = field(default_factory=dict)
    eps_cap: float = 1.0
    rate_factor: float = 1.0

    def __post_init__(self):
        if min(self.E1, self.E2, self.E3, self.eps_cap, self.rate_factor) <= 0 or self.s <= 0:
            raise ValueError("calibrated constants must be positive")
        self.eps_table = {int(k): float(v) for k, v in self.eps_table.items()}

    def eps(self, q: int) -> float:
        if q in self.eps_table:
            return self.eps_table[q]
        return min(self.eps_cap, self.rate_factor / (2.0 * q**self.dimension))

    def predicted_mse(self, k: int, q: int, m: int) -> float:
        return (self.E1 * (1 - self.eps(q)) ** k + self.E2 * 10.0 ** (-self.s * q)
                + self.E3 * m**-4.0)


def complexity_plan(model: CalibratedModel, tol: float, split: float = 3.0,
                    q_cap: int = 8, m_cap: int = 512) -> dict:
    """Smallest ``q``, ``m = 1/h`` and ``k`` bringing each error term to ``tol^2/split``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    target = tol**2 / split
    q = max(1, math.ceil(math.log10(model.E2 / target) / model.s))
    m = max(1, math.ceil((target / model.E3) ** -0.25))
    eps = model.eps(q)
    k = max(1, math.ceil(math.log(model.E1 / target) / -math.log1p(-eps)))
    if q > q_cap or m > m_cap:
        raise InfeasibleToleranceError(f"tol={tol:g} needs q={q}, m={m} beyond the caps "
                                       f"({q_cap}, {m_cap})")
    return {"tol": tol, "q": q, "m": m, "k_max": k, "eps": eps,
            "predicted_mse": float(model.predicted_mse(k, q, m))}


def calibrate(cfg: StudyConfig) -> tuple[CalibratedModel, dict]:
    """Run the quadrature, FE and SAGA-rate studies and collect the constants."""
    quad = study_quadrature(cfg.for_study("quadrature"))
    fe = study_fe(cfg.for_study("fe"))
    rate_cfg = dataclasses.replace(cfg.for_study("saga-rate"), tau=cfg.complexity_tau)
    rate = study_saga_rate(rate_cfg)
    good = [r for r in rate.tables["q"] if not r["diverged"]]
    if not good:
        raise RuntimeError("every SAGA calibration run diverged")
    eps_table = {r["q"]: r["eps_est"] for r in good}
    inst = cfg.make_instance()
    model = CalibratedModel(
        E1=max(r["E1"] for r in good), E2=quad.fit["E2"], s=quad.fit["s"], E3=fe.fit["E3"],
        dimension=inst.dimension, eps_table=eps_table,
        eps_cap=min(eps_table.values()),
        rate_factor=min(r["ratio"] for r in good))
    return model, {"quadrature": quad, "fe": fe, "saga-rate": rate}


def complexity_driver(cfg: StudyConfig, model: CalibratedModel | None = None) -> StudyResult:
    """One SAGA run per tolerance at the planned ``(q, m, k_max)``.

    The error is measured against a CG reference at ``q_ref = max q + 1``
    on a mesh four times finer than the finest planned one. ``W`` is
    ``k_max * m^(2 gamma)``; ``W_counted`` charges the solves actually
    performed (including the initial memory sweep) at the same unit cost.
    """
    calib = {}
    if model is None:
        model, calib = calibrate(cfg)
    inst = cfg.make_instance()
    plans = [complexity_plan(model, tol, cfg.split, cfg.q_cap, cfg.m_cap)
             for tol in sorted(cfg.tol_list, reverse=True)]
    q_ref = cfg.q_ref or max(p["q"] for p in plans) + 1
    m_ref = cfg.m_ref or 4 * max(p["m"] for p in plans)
    _, u_ref = reference_control(inst, m_ref, q_ref, cfg.cg_tol)
    fine = build_space(m_ref, inst.dirichlet)
    seeds = spawn_seeds(cfg.seed, len(plans))
    rows = []
    for plan, seed in zip(plans, seeds):
        ocp = _build_ocp(inst, plan["m"], plan["q"])

        def error(u, ocp=ocp):
            d = prolongate(ocp.space, u, fine) - u_ref
            return float(np.sqrt(d @ (fine.mass @ d)))

        sc = SagaConfig(tau=cfg.complexity_tau, k_max=plan["k_max"], seed=seed,
                        sampling=_sampling(cfg, ocp), init_policy=cfg.init_policy)
        row = dict(plan)
        try:
            trace = run_saga_is(ocp, sc, error_fn=error)
        except DivergenceError as exc:
            row.update(error=math.nan, k_fst=-1, diverged_at=exc.k, W=-1, W_counted=-1)
            rows.append(row)
            continue
        err = np.asarray(trace.err_l2)
        hit = np.nonzero(err <= plan["tol"])[0]
        cost = int(plan["m"]) ** int(round(2 * cfg.gamma))
        row.update(error=float(err[-1]), k_fst=int(trace.k[hit[0]]) if hit.size else -1,
                   diverged_at=-1, W=plan["k_max"] * cost,
                   W_counted=int(trace.pde_solves[-1]) * cost)
        rows.append(row)
    fit = dataclasses.asdict(model)
    fit.update(q_ref=q_ref, m_ref=m_ref, tau=cfg.complexity_tau, split=cfg.split)
    result = StudyResult("complexity", {"tol": rows}, fit, seeds)
    for name, sub in calib.items():
        for key, table in sub.tables.items():
            result.tables[f"calibration-{name}-{key}"] = table
    return result


STUDIES = {
    "quadrature": study_quadrature,
    "fe": study_fe,
    "saga-rate": study_saga_rate,
    "step-sensitivity": study_step_sensitivity,
    "saga-vs-cg": study_saga_vs_cg,
    "sg-rate": study_sg_rate,
    "complexity": complexity_driver,
}


# -- output -----------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _csv_text(rows: list[dict]) -> str:
    import io

    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(v) for k, v in r.items()})
    return buf.getvalue()


def git_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def write_result(result: StudyResult, cfg: StudyConfig, out_dir=None) -> list[Path]:
    """Write ``<study>_<param>.csv`` per table and a ``manifest.json``."""
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for param, rows in result.tables.items():
        if not rows:
            continue
        path = out / f"{result.study}_{param}.csv"
        _atomic_write(path, _csv_text(rows))
        written.append(path)
    manifest = {
        "study": result.study,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "git_revision": git_revision(),
        "master_seed": cfg.seed,
        "seeds": result.seeds,
        "fit": result.fit,
        "files": [p.name for p in written],
    }
    path = out / f"{result.study}_manifest.json"
    _atomic_write(path, json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    # the most recent study also refreshes the directory-level manifest
    _atomic_write(out / "manifest.json", json.dumps(_jsonable(manifest), indent=2,
                                                    sort_keys=True) + "\n")
    written.append(path)
    return written
