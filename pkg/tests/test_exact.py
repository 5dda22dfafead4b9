import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smckit.engines import run_sis
from smckit.errors import EnumerationTooLargeError, NoReplicationsError
from smckit.exact import (
    Algorithm, ConditionalAlgorithm, csmc_expected_normalizer_bruteforce, exact_expected_normalizer,
    exact_final_law, expected_estimator_exact, expected_estimator_mc, final_law_tv, kernel_tv_decay,
)
from smckit.model import random_finite_model
from smckit.oracle import build_oracle, csmc_expected_normalizer_closed_form, kl_div
from smckit.resampling import apf_policy, uniform_policy

KINDS = ("updated_joint", "updated_marginal", "predictive_joint", "predictive_marginal")


def _algs(N):
    return [Algorithm("sis"), Algorithm("sir"), Algorithm("alpha", apf_policy(N, 0.5), 0.5)]


def test_sis_single_particle_is_proposal(canonical):
    o = build_oracle(canonical)
    est = expected_estimator_exact(canonical, "sis", 1, "updated_joint")
    prop = o.proposal_table("updated_joint")
    assert set(est.measure) == set(prop)
    for k, v in prop.items():
        assert est.measure[k] == pytest.approx(v, abs=1e-15)
    assert kl_div(o.target("updated_joint"), est.measure) == pytest.approx(
        kl_div(o.target("updated_joint"), prop), abs=1e-15)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_flat_potentials_exact(flat_model, N):
    o = build_oracle(flat_model)
    for alg in _algs(N):
        for kind in KINDS:
            est = expected_estimator_exact(flat_model, alg, N, kind)
            assert kl_div(o.target(kind), est.measure) <= 1e-12


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 3), st.integers(1, 3), st.integers(1, 3))
def test_unbiased_normalizer(seed, S, T, N):
    m = random_finite_model(np.random.default_rng(seed), S, T)
    z = build_oracle(m).normalizer
    for alg in _algs(N):
        assert exact_expected_normalizer(m, alg, N) == pytest.approx(z, abs=1e-12)


def test_uniform_alpha_law_equals_sir(canonical):
    m = canonical.truncated(2)
    a = exact_final_law(m, "sir", 2)
    b = exact_final_law(m, Algorithm("alpha", uniform_policy(2), 1.0), 2)
    assert final_law_tv(a, b) <= 1e-12


def test_estimates_sum_to_one(canonical):
    for alg in _algs(3):
        for kind in KINDS:
            est = expected_estimator_exact(canonical, alg, 3, kind)
            assert sum(est.measure.values()) == pytest.approx(1, abs=1e-10)


def test_guard_message(canonical):
    with pytest.raises(EnumerationTooLargeError, match="use monte-carlo mode"):
        expected_estimator_exact(canonical, "sis", 6, "updated_joint", limit=1000)


def test_mc_single_replication_is_one_run(canonical):
    est = expected_estimator_mc(canonical, "sis", 4, "updated_marginal", 1, np.random.default_rng(3))
    run = run_sis(canonical, 4, np.random.default_rng(3)).updated_marginal.table()
    assert est.measure == pytest.approx(run)
    with pytest.raises(NoReplicationsError, match="no replications"):
        expected_estimator_mc(canonical, "sis", 4, "updated_marginal", 0, np.random.default_rng(3))


def test_mc_deterministic(canonical):
    a = expected_estimator_mc(canonical, "sir", 3, "updated_joint", 50, np.random.default_rng(1))
    b = expected_estimator_mc(canonical, "sir", 3, "updated_joint", 50, np.random.default_rng(1))
    assert a.measure == b.measure


@pytest.mark.slow
def test_mc_converges_to_exact(canonical):
    m = canonical.truncated(2)
    exact = expected_estimator_exact(m, "sir", 2, "updated_joint").measure
    mc = expected_estimator_mc(m, "sir", 2, "updated_joint", 100_000, np.random.default_rng(11))
    for k, v in exact.items():
        assert abs(mc.measure.get(k, 0.0) - v) <= 3.5 * mc.stderr[k] + 1e-12


def test_conditional_bruteforce_flat(flat_model):
    assert csmc_expected_normalizer_bruteforce(flat_model, [(0, 1, 0)], 3) == pytest.approx(1, abs=1e-14)


@pytest.mark.parametrize("i", [1, 2])
def test_conditional_bruteforce_matches_closed_form(canonical, i):
    m = canonical.truncated(2)
    o = build_oracle(m)
    for ys in itertools.product(o.path_tuples(), repeat=i):
        v = csmc_expected_normalizer_bruteforce(m, list(ys), 3)
        assert v == pytest.approx(csmc_expected_normalizer_closed_form(o, list(ys), 3), abs=1e-12)


def test_calpha_uniform_equals_csmc(canonical):
    o = build_oracle(canonical)
    alg = ConditionalAlgorithm("calpha", uniform_policy(3), 1.0)
    for y in o.path_tuples():
        a = csmc_expected_normalizer_bruteforce(canonical, [y], 3)
        b = csmc_expected_normalizer_bruteforce(canonical, [y], 3, alg)
        assert a == pytest.approx(b, abs=1e-12)


def test_tv_decay_basics():
    pi = np.array([0.2, 0.8])
    P = np.tile(pi, (2, 1))
    assert kernel_tv_decay(P, pi, 3) == pytest.approx([0.0, 0.0, 0.0], abs=1e-15)
    Q = np.array([[0.9, 0.1], [0.025, 0.975]])
    d = kernel_tv_decay(Q, pi, 15)
    assert all(b <= a + 1e-15 for a, b in zip(d, d[1:]))
