import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smckit.conditional import (
    FrozenPath, icalpha_step, icsmc_step, param_posterior, pg_step, run_calpha_smc, run_chain,
    run_csmc, slot_law,
)
from smckit.errors import DegenerateCatalogueError, LineageError, PosteriorDegenerateError
from smckit.exact import ConditionalAlgorithm, conditional_selection_law, icsmc_kernel_matrix
from smckit.model import FiniteModel, ParamPosteriorModel, random_finite_model
from smckit.oracle import build_oracle
from smckit.resampling import AlphaMatrix, apf_policy, identity_policy, uniform_policy


def test_single_particle_returns_frozen(canonical, rng):
    sys = run_csmc(canonical, [(1, 0, 1)], 1, rng)
    assert sys.path(sys.selection) == (1, 0, 1)
    assert icsmc_step(canonical, (1, 0, 1), 1, rng) == (1, 0, 1)
    assert icalpha_step(canonical, (0, 0, 1), 1, uniform_policy(1), 1.0, rng) == (0, 0, 1)


def test_frozen_values_preserved(canonical, rng):
    y = (1, 1, 0)
    for _ in range(20):
        sys = run_csmc(canonical, [y], 4, rng)
        assert all(sys.particles[s][sys.slots[s][0]] == y[s] for s in range(3))
        assert sys.path(0) == y
        sys = run_calpha_smc(canonical, [y, (0, 0, 0)], 4, apf_policy(4), 0.5, rng)
        for s, f in enumerate(sys.slots):
            assert len(set(f)) == 2
            assert sys.particles[s][f[0]] == y[s] and sys.particles[s][f[1]] == 0


def test_lineage_errors(canonical, rng):
    with pytest.raises(LineageError, match="too many frozen paths"):
        run_csmc(canonical, [(0, 0, 0)] * 3, 2, rng)
    with pytest.raises(LineageError, match="lineages not distinct"):
        run_csmc(canonical, [FrozenPath((0, 0, 0), (0, 1, 1)), FrozenPath((1, 1, 1), (1, 1, 0))], 3, rng)


def test_identity_catalogue_pins_slots(canonical, rng):
    sys = run_calpha_smc(canonical, [(0, 1, 0), (1, 1, 0)], 2, identity_policy(2), 1.0, rng)
    assert all(f == sys.slots[0] for f in sys.slots)


def test_degenerate_catalogue():
    a = AlphaMatrix([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(DegenerateCatalogueError, match="alpha catalogue degenerate for conditioning"):
        slot_law(a, (1,), 1)


@pytest.mark.parametrize("N", [2, 3])
def test_uniform_slot_marginal(N):
    tuples, probs = slot_law(AlphaMatrix.uniform(N), (0,), 1)
    np.testing.assert_allclose(probs, np.full(N, 1 / N), atol=1e-15)


def test_fast_step_matches_generic(rng):
    m = random_finite_model(rng, 3, 4)
    y = (0, 2, 1, 1)
    for seed in range(30):
        fast = icsmc_step(m, y, 5, np.random.default_rng(seed))
        sys = run_csmc(m, [y], 5, np.random.default_rng(seed))
        assert fast == sys.path(sys.selection)


def test_flat_kernel_row_mixture_one_step():
    # with one step, the free particle is a fresh chain draw and selection is a fair coin
    m = FiniteModel((0.3, 0.2, 0.5), [], [(1.0, 1.0, 1.0)])
    o = build_oracle(m)
    P = icsmc_kernel_matrix(o, m, 2)
    for a in range(3):
        expect = 0.5 * o.proposal.copy()
        expect[a] += 0.5
        np.testing.assert_allclose(P[a], expect, atol=1e-12)


def test_flat_kernel_two_steps_by_hand():
    # g = 1, N = 2, t = 2, frozen y = (0, 0). The free particle starts at x ~ mu,
    # picks ancestor y_1 or x_1 with prob 1/2 each, then moves by M.
    mu = np.array([0.3, 0.7])
    M = np.array([[0.6, 0.4], [0.1, 0.9]])
    m = FiniteModel(mu, [M], [(1.0, 1.0)] * 2)
    o = build_oracle(m)
    free = {}
    for x1, x2 in itertools.product(range(2), repeat=2):
        free[(x1, x2)] = free.get((x1, x2), 0.0) + 0.5 * mu[x1] * M[x1, x2]
        free[(0, x2)] = free.get((0, x2), 0.0) + 0.5 * mu[x1] * M[0, x2]
    expect = {k: 0.5 * v for k, v in free.items()}
    expect[(0, 0)] += 0.5
    row = icsmc_kernel_matrix(o, m, 2)[o.index_of((0, 0))]
    for z, p in expect.items():
        assert row[o.index_of(z)] == pytest.approx(p, abs=1e-12)


def test_icalpha_uniform_equals_icsmc(canonical):
    o = build_oracle(canonical)
    P1 = icsmc_kernel_matrix(o, canonical, 2)
    P2 = icsmc_kernel_matrix(o, canonical, 2, ConditionalAlgorithm("calpha", uniform_policy(2), 1.0))
    assert np.max(np.abs(P1 - P2)) <= 1e-12


def test_icsmc_step_matches_exact_row(canonical):
    y = (0, 1, 1)
    law = conditional_selection_law(canonical, [y], 2)
    rng = np.random.default_rng(2024)
    n = 40_000
    draws = [icsmc_step(canonical, y, 2, rng) for _ in range(n)]
    for z, p in law.items():
        freq = sum(d == z for d in draws)
        assert abs(freq - n * p) <= 4 * np.sqrt(n * p * (1 - p)) + 1


def test_param_posterior(canonical):
    other = FiniteModel(canonical.initial, canonical.transitions, [(1, 1)] * 3)
    pm = ParamPosteriorModel([0, 1], [0.25, 0.75], [canonical, other])
    post = param_posterior(pm, (0, 0, 0))
    from smckit.conditional import path_density
    w = np.array([0.25 * path_density(canonical, (0, 0, 0)), 0.75 * path_density(other, (0, 0, 0))])
    np.testing.assert_allclose(post, w / w.sum(), rtol=1e-14)


def test_posterior_degenerate():
    m = FiniteModel((0.5, 0.5), [], [(0.0, 1.0)])
    pm = ParamPosteriorModel([0], [1.0], [m])
    with pytest.raises(PosteriorDegenerateError, match="parameter posterior degenerate"):
        param_posterior(pm, (0,))


def test_single_theta_grid(canonical, rng):
    pm = ParamPosteriorModel([3.0], [1.0], [canonical])
    for _ in range(10):
        th, _ = pg_step(pm, 0, (0, 1, 0), 3, rng)
        assert th == 0


def test_run_chain_contract(canonical):
    step = lambda y, r: icsmc_step(canonical, y, 1, r)
    assert run_chain(step, (0, 0, 1), 0, np.random.default_rng(0)) == [(0, 0, 1)]
    assert set(run_chain(step, (0, 0, 1), 25, np.random.default_rng(0))) == {(0, 0, 1)}
    step3 = lambda y, r: icsmc_step(canonical, y, 3, r)
    a = run_chain(step3, (0, 0, 1), 50, np.random.default_rng(5))
    b = run_chain(step3, (0, 0, 1), 50, np.random.default_rng(5))
    assert a == b


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 3), st.integers(1, 3), st.integers(2, 3))
def test_kernel_invariant_and_reversible(seed, S, T, N):
    m = random_finite_model(np.random.default_rng(seed), S, T)
    o = build_oracle(m)
    pi = o.joint
    for variant in ("icsmc", ConditionalAlgorithm("calpha", apf_policy(N, 0.5), 0.5)):
        P = icsmc_kernel_matrix(o, m, N, variant)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(pi @ P, pi, atol=1e-12)
        flux = pi[:, None] * P
        assert np.max(np.abs(flux - flux.T)) <= 1e-12
