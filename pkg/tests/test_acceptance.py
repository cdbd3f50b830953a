"""Acceptance criteria, each run at its stated scale and tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line (also collected in
the terminal summary) before asserting.
"""
import time

import numpy as np
import pytest

from sagaocp import (DiscreteOcp, SagaConfig, SamplingDistribution, TransportInstance,
                     empirical_lipschitz, fit_exponential_rate, init_saga_state, run_saga_is,
                     s_tilde, saga_step, tensor_gauss_legendre, theoretical_step_and_rate,
                     validate_gradient)
from sagaocp.ocp import random_smooth_field
from sagaocp.quadrature import weighted_sum
from sagaocp.studies import (StudyConfig, complexity_driver, reference_control, spawn_seeds,
                             study_fe, study_quadrature, study_saga_rate, study_saga_vs_cg,
                             study_sg_rate, study_step_sensitivity)

from conftest import CRITERIA

pytestmark = pytest.mark.acceptance


def report(number: int, ok: bool, detail: str, started: float):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - started:.1f} s) {detail}"
    CRITERIA.append(line)
    print(line)
    assert ok, line


def transport(m: int, q: int) -> DiscreteOcp:
    inst = TransportInstance()
    return DiscreteOcp(inst, m, tensor_gauss_legendre(q, 5, box=inst.box))


def test_criterion_01_gradient_correctness():
    t0 = time.perf_counter()
    rep = validate_gradient(transport(8, 2), trials=50, seed=2024, tolerance=1e-5,
                            raise_on_failure=False)
    err = rep.max_error[rep.configured_sign]
    report(1, rep.ok and time.perf_counter() - t0 <= 60,
           f"max relative error {err:.2e} over 50 triples (tolerance 1e-5)", t0)


def test_criterion_02_estimator_unbiasedness():
    t0 = time.perf_counter()
    ocp = transport(8, 2)
    u = random_smooth_field(ocp.space, np.random.default_rng(5))
    full = ocp.full_gradient(u)
    worst = 0.0
    for dist in (SamplingDistribution.uniform(ocp.n), SamplingDistribution.from_weights(ocp.weights)):
        terms = [ocp.weights[p] / dist.probabilities[p] * ocp.per_sample_gradient(u, p)
                 for p in range(ocp.n)]
        worst = max(worst, float(np.max(np.abs(weighted_sum(dist.probabilities, terms) - full))))
    report(2, worst <= 1e-12, f"max entry-wise deviation {worst:.2e} (n={ocp.n})", t0)


def test_criterion_03_memory_sum_oracle():
    t0 = time.perf_counter()
    ocp = transport(8, 2)
    state = init_saga_state(ocp, SagaConfig(tau=10.0, seed=spawn_seeds(3, 1)[0], diagnostic=True))
    for _ in range(200):
        saga_step(ocp, state)
    recomputed = weighted_sum(ocp.weights, (ocp.per_sample_gradient(state.phi[j], j)
                                            for j in range(ocp.n)))
    dev = float(np.max(np.abs(recomputed - state.G)))
    report(3, dev <= 1e-12, f"|G_k - sum zeta_j grad f_j(phi_j)|_inf = {dev:.2e} after 200 steps", t0)


def test_criterion_04_fe_order():
    t0 = time.perf_counter()
    res = study_fe(StudyConfig(m_list=[16, 32, 64], m_ref=256))
    ratios = [r["ratio"] for r in res.tables["h"][1:]]
    ok = all(12 <= r <= 20 for r in ratios) and time.perf_counter() - t0 <= 600
    report(4, ok, "squared-error ratios per halving " + ", ".join(f"{r:.2f}" for r in ratios), t0)


def test_criterion_05_quadrature_decay():
    t0 = time.perf_counter()
    res = study_quadrature(StudyConfig(m=8, q_list=[1, 2, 3, 4]))
    dec = [r["log10_decrement"] for r in res.tables["q"][1:]]
    ok = all(3.4 <= d <= 4.3 for d in dec) and time.perf_counter() - t0 <= 900
    report(5, ok, f"log10 decrements {', '.join(f'{d:.2f}' for d in dec)} "
                  f"(reference q={res.fit['q_ref']})", t0)


def test_criterion_06_saga_rate():
    t0 = time.perf_counter()
    cfg = StudyConfig(m=8, q_list=[3], tau=10.0, repetitions=20, k_max=5000, seed=6)
    row = study_saga_rate(cfg).tables["q"][0]
    ok = (row["diverged"] == 0 and 0.5 <= row["ratio"] <= 4 and row["r2"] >= 0.9
          and time.perf_counter() - t0 <= 1800)
    if row["diverged"]:
        detail = (f"{row['diverged']}/20 runs hit the divergence guard "
                  f"(first at k={row['first_divergence']})")
    else:
        detail = f"eps_est/eps_th = {row['ratio']:.3f}, R^2 = {row['r2']:.3f}, E1 = {row['E1']:.3f}"
    report(6, ok, detail, t0)


def test_criterion_07_sg_rate():
    t0 = time.perf_counter()
    l = 2 * TransportInstance().beta
    base = StudyConfig(m=8, q=2, repetitions=20, k_max=10000, seed=7)
    # the rate statement assumes tau0 > 1/l
    res = study_sg_rate(StudyConfig(**{**base.to_dict(), "tau0": 1.2 / l}))
    fit = res.fit
    if fit["diverged"]:
        detail = f"tau0 = 1.2/l = {1.2 / l:.0f}: {fit['diverged']}/20 runs diverged"
        slope = float("nan")
    else:
        slope = fit["slope"]
        detail = f"tau0 = 1.2/l: slope {slope:.3f}"
    small = study_sg_rate(StudyConfig(**{**base.to_dict(), "tau0": 10.0})).fit
    detail += f"; stable tau0 = 10: slope {small.get('slope', float('nan')):.3f}"
    ok = -1.3 <= slope <= -0.7 and time.perf_counter() - t0 <= 1800
    report(7, ok, detail, t0)


def test_criterion_08_step_phases():
    t0 = time.perf_counter()
    cfg = StudyConfig(m=8, q=2, tau_list=[0.01, 10.0, 100.0], repetitions=5, k_max=5000, seed=8)
    rows = {r["tau"]: r for r in study_step_sensitivity(cfg).tables["tau"]}
    r100, r10, r001 = rows[100.0], rows[10.0], rows[0.01]
    div_ok = r100["outcome"] == "diverged" and 0 < r100["first_divergence"] <= 500
    conv_ok = r10["outcome"] == "converged" and r10["r2"] >= 0.9
    slow_ok = (r001["outcome"] == "converged" and conv_ok
               and r001["contraction"] > r10["contraction"])
    detail = (f"tau=100 guard at k={r100['first_divergence']} [{'ok' if div_ok else 'no'}]; "
              f"tau=10 {r10['outcome']}"
              + (f" at k={r10['first_divergence']}" if r10["outcome"] == "diverged" else
                 f" R^2={r10['r2']:.3f}") + f" [{'ok' if conv_ok else 'no'}]; "
              f"tau=0.01 contraction {r001['contraction']:.6f} [{'ok' if slow_ok else 'no'}]")
    report(8, div_ok and conv_ok and slow_ok and time.perf_counter() - t0 <= 600, detail, t0)


def test_criterion_09_lyapunov():
    t0 = time.perf_counter()
    ocp, u_star = reference_control(TransportInstance(), 8, 2, 1e-12)
    dist = SamplingDistribution.uniform(ocp.n)
    L = empirical_lipschitz(ocp, pairs=ocp.n, power_iterations=40, seed=9)["L"]
    th = theoretical_step_and_rate(2 * ocp.beta, L, s_tilde(ocp.rule, dist), ocp.n)
    V = []
    for seed in spawn_seeds(9, 20):
        cfg = SagaConfig(tau=th["tau"], k_max=1000, seed=seed, sampling=dist, diagnostic=True)
        tr = run_saga_is(ocp, cfg, u_ref=u_star)
        V.append(np.square(tr.err_l2) + th["alpha"] * np.asarray(tr.qk))
    mean = np.mean(V, axis=0)[50:]
    frac = float(np.mean(np.diff(mean) <= 0))
    report(9, frac >= 0.95, f"L_emp = {L:.4f}, tau = {th['tau']:.3e}, non-increasing in "
                            f"{100 * frac:.1f}% of steps after k=50", t0)


def test_criterion_10_saga_vs_cg():
    t0 = time.perf_counter()
    cfg = StudyConfig(m=16, q=2, tau=10.0, k_max=600, repetitions=1, seed=10)
    res = study_saga_vs_cg(cfg)
    rows = {r["budget_over_n"]: r for r in res.tables["budget"]}
    # budgets are counted after the shared initial sweep of 2n solves
    early, late = rows[4], rows[22]
    ok = (res.fit["diverged"] == 0 and early["saga_err"] < early["cg_err"]
          and late["cg_err"] < late["saga_err"] and time.perf_counter() - t0 <= 900)
    report(10, ok, f"at +2n: SAGA {early['saga_err']:.3e} vs CG {early['cg_err']:.3e}; "
                   f"at +20n: CG {late['cg_err']:.3e} vs SAGA {late['saga_err']:.3e}", t0)


def test_criterion_11_complexity():
    t0 = time.perf_counter()
    cfg = StudyConfig(tol_list=[1e-1, 3.16e-2, 1e-2], seed=11)
    rows = sorted(complexity_driver(cfg).tables["tol"], key=lambda r: -r["tol"])
    errs_ok = all(r["error"] <= r["tol"] for r in rows)
    mono = all(a[k] <= b[k] for a, b in zip(rows, rows[1:]) for k in ("q", "m", "k_max"))
    detail = "; ".join(f"tol={r['tol']:.3g}: q={r['q']} 1/h={r['m']} k_max={r['k_max']} "
                       f"err={r['error']:.3e}" for r in rows)
    report(11, errs_ok and mono and time.perf_counter() - t0 <= 3600, detail, t0)


def test_criterion_12_s_tilde_bounded():
    t0 = time.perf_counter()
    spreads = []
    for M in range(1, 6):
        vals = []
        for q in range(1, 11):
            rule = tensor_gauss_legendre(q, M, box=[0, 1])
            vals.append(s_tilde(rule, SamplingDistribution.uniform(rule.n)))
        spreads.append(max(vals) / min(vals))
    report(12, max(spreads) <= 3, "max/min over q per M: " +
           ", ".join(f"{s:.3f}" for s in spreads), t0)
