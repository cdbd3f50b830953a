import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sagaocp.ocp import random_smooth_field
from sagaocp.optim import (CgConfig, DivergenceError, IterTrace, SagaConfig, SgConfig,
                           fit_exponential_rate, fit_power_law, init_saga_state, load_saga_state,
                           q_k_diagnostic, run_saga_is, run_sg_is, saga_step, save_saga_state,
                           solve_cg, theoretical_step_and_rate)
from sagaocp.quadrature import SamplingDistribution


@pytest.fixture(scope="module")
def reference(transport_q2):
    return solve_cg(transport_q2, CgConfig(tol_grad=1e-13)).u


def test_cg_trace_and_budget(small_transport):
    res = solve_cg(small_transport, CgConfig(tol_grad=1e-12), u_ref=np.zeros(small_transport.N))
    t = res.trace
    assert t.pde_solves[0] == 2 and np.all(np.diff(t.pde_solves) == 2)
    assert t.err_l2[0] == 0.0
    assert t.error_at_budget(3) == t.err_l2[0]
    with pytest.raises(ValueError):
        t.error_at_budget(1)


@pytest.mark.parametrize("policy", ["sweep", "zero"])
def test_memory_sum_matches_stored_controls(transport_q2, policy):
    ocp = transport_q2
    state = init_saga_state(ocp, SagaConfig(tau=5, seed=3, diagnostic=True, init_policy=policy))
    for _ in range(150):
        saga_step(ocp, state)
    recomputed = np.array([ocp.per_sample_gradient(state.phi[j], j) for j in range(ocp.n)])
    if policy == "zero":
        untouched = np.all(state.grads == 0, axis=1)
        recomputed[untouched] = 0.0
    G = np.einsum("j,jn->n", ocp.weights, recomputed)
    np.testing.assert_allclose(state.G, G, rtol=0, atol=1e-12)
    np.testing.assert_allclose(state.memory_sum(ocp.weights), state.G, atol=1e-13)


def test_saga_fixed_point(transport_q2, reference):
    ocp = transport_q2
    trace = run_saga_is(ocp, SagaConfig(tau=10, k_max=200, seed=0), u0=reference,
                        u_ref=reference)
    # at u* every correction term vanishes and the step is tau * grad J(u*),
    # which is as small as the CG residual
    drift = 10 * ocp.norm(ocp.full_gradient(reference))
    err = np.asarray(trace.err_l2)
    assert np.all(err <= 1.1 * drift * np.asarray(trace.k) + 1e-14)


def test_saga_converges_and_counts_solves(transport_q2, reference):
    ocp = transport_q2
    trace = run_saga_is(ocp, SagaConfig(tau=5, k_max=1500, seed=1), u_ref=reference)
    assert trace.err_l2[-1] < 0.5 * trace.err_l2[0]
    assert trace.pde_solves[0] == 2 * ocp.n
    assert trace.pde_solves[-1] == 2 * ocp.n + 2 * 1500


def test_qk_tracking_matches_direct_evaluation(transport_q2, reference):
    ocp = transport_q2
    cfg = SagaConfig(tau=5, k_max=60, seed=2, diagnostic=True)
    trace = run_saga_is(ocp, cfg, u_ref=reference)
    direct = q_k_diagnostic(ocp, trace.state, u_star=reference)
    assert trace.qk[-1] == pytest.approx(direct, rel=1e-10)


def test_divergence_guard_carries_partial_trace(transport_q2):
    with pytest.raises(DivergenceError) as info:
        run_saga_is(transport_q2, SagaConfig(tau=100, k_max=2000, seed=0))
    exc = info.value
    assert exc.trace.stop_reason == "diverged" and 0 < exc.k <= 2000
    assert len(exc.trace) >= 1


def test_checkpoint_resume_is_bitwise(tmp_path, transport_q2):
    ocp = transport_q2
    cfg = SagaConfig(tau=5, k_max=40, seed=9, diagnostic=True)
    full = run_saga_is(ocp, SagaConfig(tau=5, k_max=80, seed=9, diagnostic=True))
    first = run_saga_is(ocp, cfg)
    save_saga_state(tmp_path / "s.bin", first.state)
    state = load_saga_state(tmp_path / "s.bin")
    run_saga_is(ocp, cfg, state=state)
    np.testing.assert_array_equal(state.u, full.state.u)
    np.testing.assert_array_equal(state.G, full.state.G)
    assert state.k == 80


def test_sg_is_first_step_is_unbiased(transport_q2, rng):
    ocp = transport_q2
    u0 = random_smooth_field(ocp.space, rng)
    dist = SamplingDistribution.from_weights(ocp.weights)
    expected = u0 - 2.0 * ocp.full_gradient(u0)
    mean = np.zeros(ocp.N)
    for i in range(ocp.n):
        g = ocp.per_sample_gradient(u0, i)
        mean += dist.probabilities[i] * (u0 - 2.0 * ocp.weights[i] / dist.probabilities[i] * g)
    np.testing.assert_allclose(mean, expected, atol=1e-12)
    trace = run_sg_is(ocp, SgConfig(tau0=2.0, k_max=30, seed=0, sampling=dist), u0=u0)
    assert trace.pde_solves[-1] == 60 and trace.stop_reason == "k_max"


def test_configs_validate():
    with pytest.raises(ValueError):
        SagaConfig(tau=0)
    with pytest.raises(ValueError):
        SagaConfig(init_policy="random")
    with pytest.raises(ValueError):
        SgConfig(tau0=-1)
    assert SgConfig(tau0=6000).satisfies_rate_condition(2e-4)
    assert not SgConfig(tau0=10).satisfies_rate_condition(2e-4)
    with pytest.raises(ValueError):
        CgConfig(tol_grad=0)


def test_theoretical_step_and_rate():
    out = theoretical_step_and_rate(l=2.0, L=4.0, S=1.0, n=10)
    assert out["tau1"] == pytest.approx(2 / 400)
    assert out["tau"] == pytest.approx(1 / 400)
    assert out["eps"] == pytest.approx(min(4 / 1600, 1 / 20))
    assert out["alpha"] == pytest.approx(160 / 400**2)
    assert theoretical_step_and_rate(1, 1, 1, 1000)["eps"] == 1 / 2000
    with pytest.raises(ValueError):
        theoretical_step_and_rate(0, 1, 1, 1)


@settings(max_examples=30, deadline=None)
@given(E1=st.floats(0.01, 100), eps=st.floats(1e-4, 0.2))
def test_exponential_fit_recovers_synthetic_rate(E1, eps):
    k = np.arange(0, 400)
    fit = fit_exponential_rate((k, E1 * (1 - eps) ** k), window=0.0)
    assert fit.eps == pytest.approx(eps, rel=1e-8)
    assert fit.E1 == pytest.approx(E1, rel=1e-8)
    assert fit.r2 == pytest.approx(1.0)


def test_exponential_fit_on_traces_and_window():
    traces = []
    for scale in (1.0, 3.0):
        t = IterTrace()
        for k in range(100):
            t.record(k, err=scale * 0.9**k)
        traces.append(t)
    fit = fit_exponential_rate(traces, window=(20, 80))
    assert fit.eps == pytest.approx(0.1) and fit.E1 == pytest.approx(2.0)
    with pytest.raises(ValueError):
        fit_exponential_rate(traces, window=(10, 12))


def test_power_law_fit():
    k = np.arange(1, 10001)
    slope, intercept, r2 = fit_power_law(k, 5.0 / k, (1e2, 1e4))
    assert slope == pytest.approx(-1.0) and 10**intercept == pytest.approx(5.0)


def test_trace_requires_increasing_k(tmp_path):
    t = IterTrace()
    t.record(0, err=1.0, solves=2)
    with pytest.raises(ValueError):
        t.record(0)
    t.record(3, err=0.5, solves=8)
    t.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "k,err_l2,objective,qk,pde_solves,wall_ms" and len(lines) == 3
