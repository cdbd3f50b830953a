import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sagaocp.quadrature import (QuadratureRule, SamplingDistribution, draw_index, expectation,
                                gauss_legendre, monte_carlo_rule, rule_from_json, rule_to_json,
                                s_tilde, tensor_gauss_legendre, tensorize, weighted_sum)


@pytest.mark.parametrize("q", range(1, 21))
def test_gauss_legendre_integrates_monomials_exactly(q):
    rule = gauss_legendre(q)
    for k in range(2 * q):
        exact = 0.0 if k % 2 else 1.0 / (k + 1)
        assert abs(rule.weights @ rule.nodes**k - exact) <= 1e-13


@pytest.mark.parametrize("q", [1, 2, 5, 17, 64, 200])
def test_gauss_legendre_matches_numpy(q):
    x, w = np.polynomial.legendre.leggauss(q)
    rule = gauss_legendre(q)
    np.testing.assert_allclose(rule.nodes, x, atol=5e-15)
    np.testing.assert_allclose(rule.weights, w / 2, rtol=0, atol=5e-15)
    np.testing.assert_array_equal(rule.nodes, -rule.nodes[::-1])


def test_gauss_legendre_rejects_zero():
    with pytest.raises(ValueError):
        gauss_legendre(0)


def test_small_rules():
    r = gauss_legendre(1)
    assert r.nodes.tolist() == [0.0] and r.weights.tolist() == [1.0]
    r = gauss_legendre(2)
    np.testing.assert_allclose(r.nodes, [-1 / np.sqrt(3), 1 / np.sqrt(3)], atol=1e-16)


def test_tensor_ordering_last_dimension_fastest():
    rule = tensor_gauss_legendre([2, 3], box=[[0, 1], [0, 1]])
    g2, g3 = gauss_legendre(2), gauss_legendre(3)
    x0 = 0.5 * (g2.nodes + 1)
    x1 = 0.5 * (g3.nodes + 1)
    assert rule.n == 6
    np.testing.assert_allclose(rule.nodes[:3, 0], x0[0])
    np.testing.assert_allclose(rule.nodes[:3, 1], x1)
    np.testing.assert_allclose(rule.weights[4], g2.weights[1] * g3.weights[1])


def test_tensor_weights_sum_to_one_and_arrays_are_readonly():
    rule = tensor_gauss_legendre(3, 5, box=[0, 1])
    assert rule.n == 243 and rule.dimension == 5
    assert abs(rule.weights.sum() - 1) < 1e-14
    with pytest.raises(ValueError):
        rule.nodes[0, 0] = 1.0


def test_tensor_cap_and_dimension_limits():
    with pytest.raises(ValueError):
        tensor_gauss_legendre(10, 8, cap=10**6)
    with pytest.raises(ValueError):
        tensorize([])
    with pytest.raises(ValueError):
        tensor_gauss_legendre(2)


@settings(max_examples=40, deadline=None)
@given(q=st.integers(1, 6), degs=st.lists(st.integers(0, 11), min_size=1, max_size=3))
def test_tensor_rule_exact_on_separable_polynomials(q, degs):
    degs = [d for d in degs]
    rule = tensor_gauss_legendre(q, len(degs), box=[0, 1])
    values = np.prod([rule.nodes[:, i] ** d for i, d in enumerate(degs)], axis=0)
    exact = np.prod([1.0 / (d + 1) for d in degs])
    got = expectation(rule, list(values))
    if all(d <= 2 * q - 1 for d in degs):
        assert abs(got - exact) <= 1e-13
    assert np.isfinite(got)


def test_expectation_of_constant_and_callable():
    rule = tensor_gauss_legendre(4, 2, box=[[-1, 1], [0, 2]])
    assert abs(expectation(rule, lambda eta: 1.0) - 1.0) < 1e-15
    assert abs(expectation(rule, lambda eta: eta[1]) - 1.0) < 1e-14
    with pytest.raises(ValueError):
        expectation(rule, [1.0, 2.0])


def test_weighted_sum_is_compensated_and_handles_arrays():
    w = np.full(10**5, 1e-5)
    assert weighted_sum(w, np.full(10**5, 0.1)) == pytest.approx(0.1, abs=1e-16)
    v = weighted_sum([0.5, 0.5], [np.ones(3), 3 * np.ones(3)])
    np.testing.assert_array_equal(v, 2 * np.ones(3))
    with pytest.raises(ValueError):
        weighted_sum([], [])


def test_sampling_distribution_validation():
    with pytest.raises(ValueError):
        SamplingDistribution(np.array([0.5, 0.5, 0.0]))
    with pytest.raises(ValueError):
        SamplingDistribution(np.array([0.5, 0.6]))
    d = SamplingDistribution.uniform(4)
    assert d.cumulative[-1] == 1.0 and d.n == 4


def test_draw_index_chi_square(rng):
    p = np.array([0.1, 0.2, 0.3, 0.4])
    dist = SamplingDistribution(p)
    draws = np.array([draw_index(dist, rng) for _ in range(20000)])
    assert draws.min() >= 0 and draws.max() <= 3
    counts = np.bincount(draws, minlength=4)
    assert stats.chisquare(counts, 20000 * p).pvalue > 1e-3


def test_s_tilde_identities():
    rule = tensor_gauss_legendre(3, 2, box=[0, 1])
    assert s_tilde(rule, SamplingDistribution.from_weights(rule.weights)) == pytest.approx(1.0)
    u = SamplingDistribution.uniform(rule.n)
    assert s_tilde(rule, u) == pytest.approx(rule.n * np.sum(rule.weights**2))
    assert s_tilde(rule, u) >= 1.0
    with pytest.raises(ValueError):
        s_tilde(rule, SamplingDistribution.uniform(3))


def test_json_round_trip_is_exact():
    rule = tensor_gauss_legendre([3, 2], box=[[0, 1], [-2, 5]])
    back = rule_from_json(rule_to_json(rule))
    np.testing.assert_array_equal(back.nodes, rule.nodes)
    np.testing.assert_array_equal(back.weights, rule.weights)
    np.testing.assert_array_equal(back.box, rule.box)
    doc = json.loads(rule_to_json(rule))
    assert set(doc) == {"dimension", "box", "nodes", "weights"}


def test_monte_carlo_rule_is_reproducible():
    a = monte_carlo_rule(50, seed=3, box=[[0, 1]] * 5)
    b = monte_carlo_rule(50, seed=3, box=[[0, 1]] * 5)
    np.testing.assert_array_equal(a.nodes, b.nodes)
    assert isinstance(a, QuadratureRule) and a.weights.sum() == pytest.approx(1)
    assert np.all((a.nodes >= 0) & (a.nodes <= 1))
