import math
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smckit.errors import EnumerationTooLargeError, SupportMismatchError
from smckit.model import FiniteModel, random_finite_model
from smckit.oracle import (
    build_oracle, c_value, chi2_div, csmc_expected_normalizer_closed_form, divergences,
    enumerate_paths, kl_div, time_grid, tv_dist,
)

seeds = st.integers(0, 2**32 - 1)


def test_flat_model_tables(flat_model):
    o = build_oracle(flat_model)
    np.testing.assert_allclose(o.Z, 1.0, atol=1e-15)
    for s in range(0, 4):
        for u in range(s + 1, 5):
            np.testing.assert_allclose(o.G(s, u), 1.0, atol=1e-15)


def test_one_step_example():
    o = build_oracle(FiniteModel((0.5, 0.5), [], [(2.0, 1.0)]))
    assert o.normalizer == pytest.approx(1.5)
    np.testing.assert_allclose(o.filters[1], [2 / 3, 1 / 3])


def test_canonical_normalizers(canonical):
    o = build_oracle(canonical)
    np.testing.assert_allclose(o.Z, [1, 0.625, 0.5, 0.615], atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 3), st.integers(1, 4))
def test_oracle_identities(seed, S, T):
    m = random_finite_model(np.random.default_rng(seed), S, T)
    o = build_oracle(m)
    # forward recursion against brute-force path sum
    assert math.fsum(o.gamma) == pytest.approx(o.normalizer, abs=1e-12)
    assert o.Zhat(T) == pytest.approx(o.G(0, T), rel=1e-12)
    assert math.fsum(o.gamma_hat) == pytest.approx(o.Zhat(T), rel=1e-12)
    for s in range(1, T + 1):
        assert o.filters[s].sum() == pytest.approx(1, abs=1e-12)
        assert o.predictives[s].sum() == pytest.approx(1, abs=1e-12)
    # backward kernels rebuild the joint from the terminal marginal
    rebuilt = o.filters[T][o.paths[:, T - 1]].copy()
    for s in range(T - 1, 0, -1):
        rebuilt *= o.backward[s][o.paths[:, s], o.paths[:, s - 1]]
    np.testing.assert_allclose(rebuilt, o.joint, atol=1e-12)


def test_guard():
    with pytest.raises(EnumerationTooLargeError, match="enumeration too large"):
        enumerate_paths(10, 7)


def test_divergence_examples():
    p = np.array([0.5, 0.5])
    assert kl_div(p, p) == 0
    assert kl_div(p, [0.25, 0.75]) == pytest.approx(0.143841, abs=1e-5)
    assert tv_dist([1, 0], [0, 1]) == 1
    assert divergences(p, p) == divergences([0.5, 0.5], [0.5, 0.5])
    with pytest.raises(SupportMismatchError, match="support mismatch"):
        kl_div([0.5, 0.5], [1.0, 0.0])
    with pytest.raises(SupportMismatchError):
        chi2_div({"a": 1.0}, {"b": 1.0})
    with pytest.raises(SupportMismatchError):
        tv_dist([1.0], [0.5, 0.5])


@settings(max_examples=200, deadline=None)
@given(seeds, st.integers(2, 10))
def test_pinsker(seed, n):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    assert tv_dist(p, q) <= math.sqrt(kl_div(p, q) / 2) + 1e-12
    assert chi2_div(p, q) >= 0


@pytest.mark.parametrize("t", [1, 2, 3, 5])
@pytest.mark.parametrize("ell", [1, 2, 3])
def test_time_grid_counts(t, ell):
    grid = list(time_grid(ell, t + 1, t))
    assert len(grid) == comb(t, ell - 1)
    for taus in grid:
        assert taus[-1] == t + 1 and all(a < b for a, b in zip(taus, taus[1:]))
        assert taus[0] >= 1


def test_c_value_single(canonical):
    o = build_oracle(canonical)
    assert c_value(o, (4,), (0, 1, 0)) == 1.0


def test_closed_form_examples(flat_model, rng):
    o = build_oracle(flat_model)
    assert csmc_expected_normalizer_closed_form(o, [(0, 1, 1)], 3) == pytest.approx(1.0, abs=1e-15)
    m = random_finite_model(rng, 3, 1)
    o = build_oracle(m)
    N = 4
    for y in range(3):
        expect = (m.potentials[0][y] + (N - 1) * o.normalizer) / N
        assert csmc_expected_normalizer_closed_form(o, [(y,)], N) == pytest.approx(expect, abs=1e-14)
    with pytest.raises(ValueError):
        csmc_expected_normalizer_closed_form(o, [(0,), (1,)], 1)
