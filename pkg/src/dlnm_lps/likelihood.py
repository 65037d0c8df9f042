"""Poisson, negative-binomial and unit-variance Gaussian log-likelihoods in the linear predictor.

All families use a log link except the Gaussian check family (identity).
Derivatives are expressed per observation as

* ``score``  -- d loglik / d eta
* ``weight`` -- -d^2 loglik / d eta^2 (or its expectation for NB by default)
* ``dweight`` -- d weight / d eta

so that the gradient in xi is ``H' score`` and the negative Hessian is
``H' diag(weight) H``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, digamma, gammaln

from .errors import NumericalError, SpecError
from .model import Design, Family

# counts above this use gammaln/betaln instead of running sums
_MAX_TABLE = 200_000


@dataclass(frozen=True)
class LikelihoodState:
    eta: np.ndarray
    mu: np.ndarray
    family: Family
    phi: float = np.inf

    @property
    def variance(self):
        if self.family is Family.NEGBIN:
            return self.mu + self.mu**2 / self.phi
        if self.family is Family.GAUSSIAN:
            return np.ones_like(self.mu)
        return self.mu


def make_state(eta, family=Family.POISSON, phi=np.inf) -> LikelihoodState:
    family = Family(family)
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise NumericalError("non-finite linear predictor")
    if family is Family.NEGBIN and not phi > 0:
        raise SpecError("phi must be positive")
    mu = eta.copy() if family is Family.GAUSSIAN else np.exp(eta)
    return LikelihoodState(eta, mu, family, float(phi))


def _count_table(y):
    y = np.asarray(y)
    yi = np.rint(y).astype(np.int64)
    return yi, (yi.size > 0 and np.all(yi == y) and yi.max() <= _MAX_TABLE)


def lgamma_ratio(y, phi):
    """``log Gamma(y + phi) - log Gamma(phi)`` without cancellation at large phi."""
    yi, ok = _count_table(y)
    if ok:
        table = np.r_[0.0, np.cumsum(np.log(phi + np.arange(yi.max())))]
        return table[yi]
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    pos = y > 0
    out[pos] = gammaln(y[pos]) - betaln(y[pos], phi)
    return out


def digamma_ratio(y, phi):
    """``psi(y + phi) - psi(phi)``."""
    yi, ok = _count_table(y)
    if ok:
        table = np.r_[0.0, np.cumsum(1.0 / (phi + np.arange(yi.max())))]
        return table[yi]
    return digamma(np.asarray(y, dtype=float) + phi) - digamma(phi)


def log_factorial(y):
    return gammaln(np.asarray(y, dtype=float) + 1.0)


def loglik(y, state: LikelihoodState, log_yfact=None) -> float:
    """Total log-likelihood of counts ``y`` (constant terms included)."""
    y = np.asarray(y, dtype=float)
    if y.shape != state.eta.shape:
        raise SpecError("y and eta lengths differ")
    fam = state.family
    if fam is Family.GAUSSIAN:
        r = y - state.eta
        return float(-0.5 * r @ r - 0.5 * y.size * np.log(2 * np.pi))
    lf = log_factorial(y) if log_yfact is None else log_yfact
    if fam is Family.POISSON:
        return float(np.sum(y * state.eta - state.mu - lf))
    phi, mu = state.phi, state.mu
    log_pm = np.log(phi + mu)
    terms = (lgamma_ratio(y, phi) - lf - phi * np.log1p(mu / phi)
             + y * (state.eta - log_pm))
    return float(np.sum(terms))


def score_weight(y, state: LikelihoodState, observed=False):
    """Per-observation ``(score, weight, dweight/deta)``."""
    y = np.asarray(y, dtype=float)
    mu = state.mu
    fam = state.family
    if fam is Family.GAUSSIAN:
        return y - state.eta, np.ones_like(mu), np.zeros_like(mu)
    if fam is Family.POISSON:
        return y - mu, mu, mu
    phi = state.phi
    s = phi + mu
    score = phi * (y - mu) / s
    if observed:
        w = phi * mu * (phi + y) / s**2
        dw = phi * mu * (phi + y) * (phi - mu) / s**3
    else:
        w = phi * mu / s
        dw = phi**2 * mu / s**2
    return score, w, dw


def grad_hess(y, H, offset, xi, family=Family.POISSON, phi=np.inf, observed=False):
    """Gradient and Hessian of the log-likelihood with respect to ``xi``.

    ``H`` is a :class:`~dlnm_lps.model.Design` or a dense array.
    """
    D = H if isinstance(H, Design) else None
    if D is None:
        H = np.asarray(H, dtype=float)
        eta = H @ xi + (0.0 if offset is None else offset)
    else:
        eta = D @ xi + (0.0 if offset is None else offset)
    st = make_state(eta, family, phi)
    score, w, _ = score_weight(y, st, observed)
    if D is None:
        return H.T @ score, -(H.T * w) @ H
    return D.rmatvec(score), -D.gram(w)


def dloglik_dphi(y, mu, phi) -> float:
    """Derivative of the NB log-likelihood in the dispersion ``phi``."""
    if not phi > 0:
        raise SpecError("phi must be positive")
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    s = phi + mu
    return float(np.sum(digamma_ratio(y, phi) - np.log1p(mu / phi) + (mu - y) / s))


def dscore_dphi(y, mu, phi):
    return (np.asarray(y, dtype=float) - mu) * mu / (phi + mu) ** 2


def dweight_dphi(y, mu, phi, observed=False):
    s = phi + mu
    if observed:
        return mu * (2 * phi * mu + y * mu - y * phi) / s**3
    return mu**2 / s**2
