"""Moment-based orthonormal polynomial construction and the chaos RHS."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from odefit.apce import (ApceBasis, ChaosRhs, MomentTable, SingularMoments,
                         apce_univariate, basis_size, build_basis,
                         empirical_moments, gram, monomial_basis,
                         multi_indices)
from odefit.bench import generate_data, lv_rhs


def gaussian_moments(k_max):
    # E[x^k] for N(0,1): 0 for odd k, (k-1)!! for even k.
    mu = np.zeros(k_max + 1)
    mu[0] = 1.0
    for k in range(2, k_max + 1, 2):
        mu[k] = mu[k - 2] * (k - 1)
    return MomentTable(moments=mu, sample_size=0)


def uniform_moments(k_max):
    # E[x^k] for U(-1, 1): 0 for odd k, 1/(k+1) for even k.
    mu = np.array([(1.0 / (k + 1)) if k % 2 == 0 else 0.0
                   for k in range(k_max + 1)])
    return MomentTable(moments=mu, sample_size=0)


def test_gaussian_moments_give_normalized_hermite():
    # Probabilists' Hermite He_d / sqrt(d!) in ascending coefficients.
    oracles = {
        0: [1.0],
        1: [0.0, 1.0],
        2: np.array([-1.0, 0.0, 1.0]) / np.sqrt(2.0),
        3: np.array([0.0, -3.0, 0.0, 1.0]) / np.sqrt(6.0),
        4: np.array([3.0, 0.0, -6.0, 0.0, 1.0]) / np.sqrt(24.0),
    }
    table = gaussian_moments(8)
    for d, want in oracles.items():
        got = apce_univariate(table, d).coeffs
        np.testing.assert_allclose(got, want, atol=1e-10)


def test_uniform_moments_give_normalized_legendre():
    # sqrt(2d+1) P_d(x), orthonormal under the U(-1,1) expectation.
    oracles = {
        0: [1.0],
        1: np.array([0.0, 1.0]) * np.sqrt(3.0),
        2: np.array([-0.5, 0.0, 1.5]) * np.sqrt(5.0),
        3: np.array([0.0, -1.5, 0.0, 2.5]) * np.sqrt(7.0),
        4: np.array([3.0, 0.0, -30.0, 0.0, 35.0]) / 8.0 * 3.0,
    }
    table = uniform_moments(8)
    for d, want in oracles.items():
        got = apce_univariate(table, d).coeffs
        np.testing.assert_allclose(got, want, atol=1e-10)


def test_univariate_needs_enough_moments():
    with pytest.raises(SingularMoments):
        apce_univariate(gaussian_moments(4), 3)  # needs order 6


def test_degenerate_sample_is_singular():
    mom = empirical_moments(np.full(50, 2.0), 4)
    with pytest.raises(SingularMoments):
        apce_univariate(mom, 2)


def test_empirical_moments_match_numpy():
    rng = np.random.default_rng(3)
    x = rng.lognormal(size=200)
    mom = empirical_moments(x, 5)
    for k in range(6):
        assert mom.moments[k] == pytest.approx(np.mean(x**k), rel=1e-12)


def test_multi_indices_graded_and_complete():
    idx = multi_indices(2, 3)
    assert idx[0] == (0, 0)
    assert len(idx) == basis_size(2, 3) == 10
    degrees = [sum(i) for i in idx]
    assert degrees == sorted(degrees)  # graded order
    assert max(degrees) == 3
    assert len(set(idx)) == len(idx)


def test_build_basis_gram_is_identity_on_build_sample():
    data = generate_data(400, 0.0, 0)
    basis = build_basis(data.states, 3)
    g = gram(basis, data.states)
    assert np.max(np.abs(g - np.eye(basis.size))) < 1e-8


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gram_identity_for_random_lognormal_clouds(seed):
    rng = np.random.default_rng(seed)
    states = rng.lognormal(mean=0.0, sigma=0.6, size=(300, 2))
    basis = build_basis(states, 2)
    g = gram(basis, states)
    assert np.max(np.abs(g - np.eye(basis.size))) < 1e-7


def test_monomial_basis_evaluates_plain_powers():
    basis = monomial_basis(2, 2)
    x = np.array([[2.0, 3.0]])
    phi = basis.eval_many(x)[0]
    # graded multi-index order: 1, x, y, x^2, xy, y^2
    np.testing.assert_allclose(phi, [1.0, 2.0, 3.0, 4.0, 6.0, 9.0], rtol=1e-14)


def test_orthonormal_basis_is_far_better_conditioned():
    data = generate_data(35, 0.0, 0)
    ortho = build_basis(data.states, 2)
    mono = monomial_basis(2, 2, build_sample=data.states)
    c_o = np.linalg.cond(gram(ortho, data.states))
    c_m = np.linalg.cond(gram(mono, data.states))
    assert c_o * 1e2 <= c_m


def test_chaos_rhs_param_layout_and_linearity():
    data = generate_data(50, 0.0, 1)
    rhs = ChaosRhs(build_basis(data.states, 2))
    assert rhs.n_params == 2 * rhs.basis.size
    rng = np.random.default_rng(0)
    p1, p2 = rng.normal(size=rhs.n_params), rng.normal(size=rhs.n_params)
    x = data.states[:5]
    f1, f2 = rhs(p1, x), rhs(p2, x)
    f12 = rhs(p1 + 0.5 * p2, x)
    np.testing.assert_allclose(f12, f1 + 0.5 * f2, rtol=1e-12)


def test_quadratic_field_is_exactly_representable():
    # The predator-prey field is quadratic, so a degree-2 expansion fits it
    # with zero residual (up to the normal-equation roundoff).
    data = generate_data(200, 0.0, 2)
    basis = build_basis(data.states, 2)
    phi = basis.eval_many(data.states)
    targets = lv_rhs(data.states)
    coef, *_ = np.linalg.lstsq(phi, targets, rcond=None)
    resid = phi @ coef - targets
    assert np.max(np.abs(resid)) < 1e-10


def test_basis_serialization_round_trip():
    data = generate_data(60, 0.0, 4)
    basis = build_basis(data.states, 2)
    clone = ApceBasis.from_dict(basis.to_dict())
    x = data.states[:7]
    np.testing.assert_array_equal(basis.eval_many(x), clone.eval_many(x))
