import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interfsurv.estimands import EstimandSpec, RiskAt
from interfsurv.errors import DegenerateTail, LengthMismatch, UnsupportedPolicy
from interfsurv.policies import (CIPS, TPB, AllocationModel, ClusterPolicyContext, TypeB,
                                 all_allocations, cif_q, estimand_cif, estimand_weights, q_prob,
                                 q_marginal_minus_j, tpb_threshold)

R = RiskAt(1.0)


def ctx_of(pi, weights=None, floor=0.0):
    if weights is None:
        return ClusterPolicyContext.from_pi(pi, pi_floor=floor)
    return ClusterPolicyContext.from_model(AllocationModel(pi, weights), pi_floor=floor)


def h_enum(pi, a):
    pi = np.asarray(pi)
    return float(np.prod(np.where(np.asarray(a) == 1, pi, 1 - pi)))


def test_typeb_probability():
    assert q_prob(TypeB(0.3), [1, 0], ctx_of([0.5, 0.5])) == pytest.approx(0.21, abs=1e-15)


@pytest.mark.parametrize("a", list(itertools.product((0, 1), repeat=3)))
def test_cips_one_and_tpb_zero_are_factual(a):
    pi = [0.2, 0.55, 0.8]
    ctx = ctx_of(pi)
    assert q_prob(CIPS(1.0), a, ctx) == pytest.approx(h_enum(pi, a), abs=1e-14)
    assert q_prob(TPB(0.0), a, ctx) == pytest.approx(h_enum(pi, a), abs=1e-14)


def test_marginals_minus_j():
    ctx = ctx_of([0.4, 0.6])
    assert q_marginal_minus_j(TypeB(0.3), [1], 0, ctx) == pytest.approx(0.3)
    assert q_marginal_minus_j(TypeB(0.3), np.zeros(0), 0, ctx_of([0.4])) == pytest.approx(1.0)
    # TPB(0.5), n=2, c=1: a_{-1}=(0) leaves only (1, 0)
    pi = np.array([0.3, 0.6])
    tail = 1 - 0.7 * 0.4
    got = q_marginal_minus_j(TPB(0.5), [0], 0, ctx_of(pi))
    assert got == pytest.approx(h_enum(pi, [1, 0]) / tail, abs=1e-14)


def test_typeb_cif_is_zero():
    ctx = ctx_of([0.3, 0.5, 0.7])
    for a_obs in all_allocations(3):
        for a in all_allocations(3):
            assert cif_q(TypeB(0.4), a_obs, a, ctx) == 0.0


def test_tpb_zero_cif_is_indicator_minus_h():
    pi = [0.3, 0.5, 0.7]
    ctx = ctx_of(pi)
    for a_obs in all_allocations(3):
        for a in all_allocations(3):
            want = float(np.array_equal(a_obs, a)) - h_enum(pi, a)
            assert cif_q(TPB(0.0), a_obs, a, ctx) == pytest.approx(want, abs=1e-14)


@pytest.mark.parametrize("policy", [CIPS(2.0), TPB(0.5), TPB(0.25), CIPS(0.5)])
def test_cif_conditional_mean_zero(policy):
    pi = [0.3, 0.5, 0.7]
    ctx = ctx_of(pi)
    for a in all_allocations(3):
        total = sum(cif_q(policy, ao, a, ctx) * h_enum(pi, ao) for ao in all_allocations(3))
        assert abs(total) < 1e-12


def test_estimand_weight_examples():
    ctx = ctx_of([0.5, 0.5])
    np.testing.assert_allclose(estimand_weights(EstimandSpec("mu", R, TypeB(0.5)), [1, 0], ctx),
                               [0.125, 0.125], atol=1e-15)
    np.testing.assert_allclose(estimand_weights(EstimandSpec("mu1", R, TypeB(0.5)), [1, 0], ctx),
                               [0.25, 0.0], atol=1e-15)
    one = ctx_of([0.5])
    de = EstimandSpec("de", R, TypeB(0.3))
    assert estimand_weights(de, [1], one)[0] == pytest.approx(1.0)
    assert estimand_weights(de, [0], one)[0] == pytest.approx(-1.0)


def test_estimand_cif_examples():
    pi = [0.35, 0.6]
    ctx = ctx_of(pi)
    for a in all_allocations(2):
        assert not np.any(estimand_cif(EstimandSpec("oe", R, TypeB(0.3), TypeB(0.6)), [1, 0], a, ctx))
        got = estimand_cif(EstimandSpec("mu", R, CIPS(1.7)), [0, 1], a, ctx)
        np.testing.assert_allclose(got, cif_q(CIPS(1.7), [0, 1], a, ctx) / 2 * np.ones(2))
    pi4 = [0.2, 0.45, 0.6, 0.85]
    ctx4 = ctx_of(pi4)
    spec = EstimandSpec("mu0", R, TPB(0.25))
    for a in all_allocations(4):
        total = sum(estimand_cif(spec, ao, a, ctx4) * h_enum(pi4, ao) for ao in all_allocations(4))
        np.testing.assert_allclose(total, 0.0, atol=1e-12)


def test_allocation_model_probabilities():
    m = AllocationModel.product([0.5, 0.5])
    assert m.prob([1, 1])[0] == pytest.approx(0.25)
    m3 = AllocationModel.product([0.3, 0.6, 0.9])
    assert m3.prob([1, 0, 1])[0] == pytest.approx(0.108)
    p = [0.17, 0.71]
    assert AllocationModel.product(p).prob(all_allocations(2)).sum() == pytest.approx(1.0)


def test_count_tail():
    np.testing.assert_allclose(AllocationModel.product([0.5, 0.5]).count_tail(), [1, 0.75, 0.25])
    np.testing.assert_allclose(AllocationModel.product([1.0, 1.0, 1.0]).count_tail(), 1.0,
                               atol=1e-9)
    assert AllocationModel.product([0.2, 0.4, 0.9]).count_tail()[3] == pytest.approx(0.072)


def test_mixture_count_pmf_matches_enumeration(rng):
    p = rng.uniform(0.05, 0.95, size=(5, 3))
    w = np.array([0.2, 0.5, 0.3])
    model = AllocationModel(p, w)
    allocs = all_allocations(5)
    pmf = np.bincount(allocs.sum(axis=1), weights=model.prob(allocs), minlength=6)
    np.testing.assert_allclose(model.count_pmf(), pmf, atol=1e-14)


def test_prob_flipped_matches_direct(rng):
    model = AllocationModel(rng.uniform(0.1, 0.9, size=(4, 2)), [0.4, 0.6])
    allocs = all_allocations(4)
    got = model.prob_flipped(allocs)
    for i, a in enumerate(allocs):
        for j in range(4):
            for v in (0, 1):
                b = a.copy()
                b[j] = v
                assert got[i, j, v] == pytest.approx(model.prob(b)[0], abs=1e-15)


def test_tpb_threshold_and_degenerate_tail():
    assert tpb_threshold(0.25, 4) == 1
    assert tpb_threshold(0.5, 5) == 3
    assert tpb_threshold(0.0, 7) == 0
    with pytest.raises(DegenerateTail):
        TPB(1.0).tail_prob(ctx_of([0.01] * 6, floor=0.0))


def test_policy_parameter_checks():
    with pytest.raises(UnsupportedPolicy):
        TypeB(1.0)
    with pytest.raises(UnsupportedPolicy):
        CIPS(0.0)
    with pytest.raises(LengthMismatch):
        q_prob(TypeB(0.5), [1, 0, 1], ctx_of([0.5, 0.5]))


policies = st.one_of(st.floats(0.05, 0.95).map(TypeB), st.floats(0.2, 5.0).map(CIPS),
                     st.sampled_from([0.0, 0.2, 0.25, 0.5, 0.75]).map(TPB))


@settings(max_examples=60, deadline=None)
@given(policy=policies, n=st.integers(1, 8), seed=st.integers(0, 2 ** 31))
def test_policy_normalization_property(policy, n, seed):
    r = np.random.default_rng(seed)
    ctx = ctx_of(r.uniform(0.1, 0.9, size=(n, 2)), [0.5, 0.5])
    allocs = all_allocations(n)
    total = policy.terms(allocs, allocs[0], ctx).q.sum()
    assert abs(total - 1.0) < 1e-10


@settings(max_examples=40, deadline=None)
@given(policy=policies, n=st.integers(1, 6), seed=st.integers(0, 2 ** 31))
def test_mu_weights_sum_to_inverse_n(policy, n, seed):
    r = np.random.default_rng(seed)
    ctx = ctx_of(r.uniform(0.1, 0.9, size=n))
    spec = EstimandSpec("mu", R, policy)
    total = sum(estimand_weights(spec, a[None, :], ctx) for a in all_allocations(n))
    np.testing.assert_allclose(total, np.full(n, 1.0 / n), atol=1e-12)
