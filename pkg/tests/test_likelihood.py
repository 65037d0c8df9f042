import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import digamma, gammaln

from dlnm_lps.errors import NumericalError, SpecError
from dlnm_lps.likelihood import (digamma_ratio, dloglik_dphi, dscore_dphi, dweight_dphi, grad_hess,
                                 lgamma_ratio, loglik, make_state, score_weight)
from oracles import central_gradient, central_jacobian, negbin_loglik, poisson_loglik, random_glm


def test_poisson_closed_forms():
    assert loglik([0.0], make_state(np.array([0.0]))) == pytest.approx(-1.0, abs=1e-15)
    val = loglik([2.0], make_state(np.log([2.0])))
    assert val == pytest.approx(2 * np.log(2) - 2 - np.log(2), abs=1e-14)


def test_loglik_matches_reference_formulas():
    H, y, xi = random_glm(0)
    eta = H @ xi
    assert loglik(y, make_state(eta)) == pytest.approx(poisson_loglik(y, eta), rel=1e-13)
    for phi in (0.5, 5.0, 50.0):
        assert loglik(y, make_state(eta, "negbin", phi)) == pytest.approx(negbin_loglik(y, eta, phi), rel=1e-12)


def test_negbin_large_phi_approaches_poisson():
    rng = np.random.default_rng(1)
    eta = rng.normal(1.0, 0.5, 200)
    y = rng.poisson(np.exp(eta)).astype(float)
    diff = loglik(y, make_state(eta, "negbin", 1e8)) - loglik(y, make_state(eta))
    assert abs(diff) < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 500), min_size=1, max_size=20), st.floats(1e-3, 1e6))
def test_gamma_ratio_tables(y, phi):
    y = np.array(y)
    np.testing.assert_allclose(lgamma_ratio(y, phi), gammaln(y + phi) - gammaln(phi),
                               rtol=1e-9, atol=1e-9 * max(1.0, np.log(phi + 500)))
    np.testing.assert_allclose(digamma_ratio(y, phi), digamma(y + phi) - digamma(phi), rtol=1e-8, atol=1e-12)


def test_score_at_unit_mean_intercept_only():
    y = np.array([0.0, 2.0, 1.0, 3.0])
    g, _ = grad_hess(y, np.ones((4, 1)), None, np.zeros(1))
    assert g[0] == pytest.approx(np.sum(y - 1))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("family,phi", [("poisson", np.inf), ("negbin", 3.0)])
def test_gradient_and_hessian_match_finite_differences(seed, family, phi):
    H, y, xi = random_glm(seed, n=80, p=12)
    ll = (lambda b: poisson_loglik(y, H @ b)) if family == "poisson" else (lambda b: negbin_loglik(y, H @ b, phi))
    g, Hs = grad_hess(y, H, None, xi, family, phi, observed=True)
    np.testing.assert_allclose(g, central_gradient(ll, xi), rtol=1e-6, atol=1e-6 * np.abs(g).max())
    num = central_jacobian(lambda b: grad_hess(y, H, None, b, family, phi, observed=True)[0], xi)
    np.testing.assert_allclose(Hs, num, rtol=1e-5, atol=1e-5 * np.abs(Hs).max())


def test_expected_information_is_mean_of_observed():
    rng = np.random.default_rng(2)
    mu, phi = 4.0, 2.5
    y = rng.negative_binomial(phi, phi / (phi + mu), 400_000).astype(float)
    st = make_state(np.full(y.size, np.log(mu)), "negbin", phi)
    _, w_obs, _ = score_weight(y, st, observed=True)
    _, w_exp, _ = score_weight(y, st, observed=False)
    assert w_obs.mean() == pytest.approx(w_exp[0], rel=0.01)


@pytest.mark.parametrize("observed", [False, True])
def test_weight_derivative_in_eta(observed):
    y = np.array([0.0, 3.0, 10.0])
    eta = np.log([1.0, 2.5, 7.0])
    h = 1e-6
    for fam, phi in (("poisson", np.inf), ("negbin", 4.0)):
        _, _, dw = score_weight(y, make_state(eta, fam, phi), observed)
        wp = score_weight(y, make_state(eta + h, fam, phi), observed)[1]
        wm = score_weight(y, make_state(eta - h, fam, phi), observed)[1]
        np.testing.assert_allclose(dw, (wp - wm) / (2 * h), rtol=1e-6)


@pytest.mark.parametrize("phi", [0.5, 5.0, 50.0])
def test_dispersion_derivatives_match_finite_differences(phi):
    H, y, xi = random_glm(3)
    mu = np.exp(H @ xi)
    h = 1e-6 * phi
    closed = np.sum(digamma(y + phi) - digamma(phi) + np.log(phi / (phi + mu)) + 1 - (y + phi) / (phi + mu))
    assert dloglik_dphi(y, mu, phi) == pytest.approx(closed, rel=1e-10, abs=1e-12)
    # central difference of a sum of order 1e2 carries roundoff near 1e-8 absolute
    fd = (negbin_loglik(y, np.log(mu), phi + h) - negbin_loglik(y, np.log(mu), phi - h)) / (2 * h)
    assert dloglik_dphi(y, mu, phi) == pytest.approx(fd, rel=1e-6, abs=1e-7)
    sp = score_weight(y, make_state(np.log(mu), "negbin", phi + h))[0]
    sm = score_weight(y, make_state(np.log(mu), "negbin", phi - h))[0]
    np.testing.assert_allclose(dscore_dphi(y, mu, phi), (sp - sm) / (2 * h), rtol=1e-6, atol=1e-12)
    for observed in (False, True):
        wp = score_weight(y, make_state(np.log(mu), "negbin", phi + h), observed)[1]
        wm = score_weight(y, make_state(np.log(mu), "negbin", phi - h), observed)[1]
        np.testing.assert_allclose(dweight_dphi(y, mu, phi, observed), (wp - wm) / (2 * h), rtol=1e-6, atol=1e-12)


def test_dispersion_derivative_vanishes_in_poisson_limit():
    y = np.array([3.0, 7.0, 1.0])
    assert abs(dloglik_dphi(y, y, 1e8)) < 1e-10


def test_dispersion_derivative_single_zero():
    phi = 2.0
    assert dloglik_dphi([0.0], np.array([1.0]), phi) == pytest.approx(
        np.log(phi / (phi + 1)) + 1 / (phi + 1), rel=1e-14)


def test_errors():
    with pytest.raises(SpecError):
        dloglik_dphi([1.0], np.array([1.0]), 0.0)
    with pytest.raises(NumericalError):
        make_state(np.array([np.nan]))
    with pytest.raises(SpecError):
        make_state(np.zeros(2), "negbin", -1.0)
