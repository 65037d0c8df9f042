"""Laplace approximation: inner Newton mode, hyperparameter posterior mode, DIC.

Working hyperparameters are ``(log lambda_1..k, log tau, logit rho, log phi)``,
the last three only when the model has them. The outer objective is the
Laplace-approximated log posterior of the hyperparameters,

    F = loglik(xi) - xi'Q xi / 2 + logdet(Q) / 2 - logdet(H'WH + Q) / 2 + log prior,

evaluated at the conditional mode ``xi``. Its gradient is analytic: the mode
condition removes the implicit dependence of the first two terms and the
derivative of the last log-determinant uses the leverages ``diag(H Sigma H')``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.optimize import minimize

from .errors import InnerConvergenceError, NumericalError, SpecError
from .likelihood import (dloglik_dphi, dscore_dphi, dweight_dphi, log_factorial, loglik,
                         make_state, score_weight)
from .model import Design, Family, PriorPrecision, dense_design

NU = 3.0
A_PRIOR = 1e-5
B_PRIOR = 1e-5
ETA_MAX = 40.0

BOUNDS = {"lambda": (-8.0, 20.0), "tau": (-10.0, 15.0), "rho": (-8.0, 8.0), "phi": (-5.0, 20.0)}


@dataclass
class Hyperparams:
    lam: np.ndarray
    tau: float | None = None
    rho: float | None = None
    phi: float = np.inf
    delta_lam: np.ndarray | None = None
    delta_tau: float | None = None
    lambda_names: tuple = ()

    def __post_init__(self):
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if np.any(~(self.lam > 0)):
            raise SpecError("smoothing parameters must be positive")
        if self.tau is not None and not self.tau > 0:
            raise SpecError("tau must be positive")
        if self.rho is not None and not 0 < self.rho < 1:
            raise SpecError("rho must lie in (0, 1)")
        if not self.phi > 0:
            raise SpecError("phi must be positive")
        if self.lambda_names and len(self.lambda_names) != self.lam.size:
            raise SpecError("lambda_names and lam disagree in length")
        if self.delta_lam is None:
            self.delta_lam = delta_mode(self.lam)
        if self.delta_tau is None and self.tau is not None:
            self.delta_tau = float(delta_mode(self.tau))

    def as_dict(self):
        out = {name: float(v) for name, v in zip(self.lambda_names or
                                                 [f"lambda_{i}" for i in range(self.lam.size)], self.lam)}
        if self.tau is not None:
            out["tau"] = float(self.tau)
            out["delta_tau"] = float(self.delta_tau)
        if self.rho is not None:
            out["rho"] = float(self.rho)
        out["phi"] = float(self.phi) if np.isfinite(self.phi) else None
        out["delta_lambda"] = [float(d) for d in self.delta_lam]
        return out


def delta_mode(x, nu=NU, a=A_PRIOR, b=B_PRIOR):
    """Conditional mode of the Gamma auxiliary given a precision-type parameter."""
    return (a + nu / 2 - 1.0) / (b + nu * np.asarray(x, dtype=float) / 2)


def log_prior_precision(x, nu=NU, a=A_PRIOR, b=B_PRIOR):
    """Joint log density of ``(x, delta)`` at the profiled ``delta``; returns (value, d/dlog x)."""
    x = np.asarray(x, dtype=float)
    d = delta_mode(x, nu, a, b)
    al, rate = nu / 2, nu * d / 2
    from scipy.special import gammaln
    val = (al * np.log(rate) - gammaln(al) + (al - 1) * np.log(x) - rate * x
           + a * np.log(b) - gammaln(a) + (a - 1) * np.log(d) - b * d)
    grad = (al - 1) - rate * x
    return val, grad


def log_prior_rho(rho):
    """Beta(1/2, 1/2) density of rho expressed on the logit scale; returns (value, d/dlogit)."""
    return 0.5 * np.log(rho) + 0.5 * np.log1p(-rho) - np.log(np.pi), 0.5 - rho


@dataclass
class InnerResult:
    xi: np.ndarray
    sigma: np.ndarray
    logpost: float
    loglik: float
    n_iter: int
    chol: tuple
    logdet_hess: float
    eta: np.ndarray
    trace: list = field(default_factory=list)


def _cholesky(M, what="system"):
    try:
        return cho_factor(M, lower=True, check_finite=True)
    except (LinAlgError, ValueError):
        n = M.shape[0]
        jitter = 1e-8 * np.trace(M) / n
        try:
            return cho_factor(M + jitter * np.eye(n), lower=True)
        except (LinAlgError, ValueError):
            raise NumericalError(f"{what} is not positive definite after jitter {jitter:.3g}") from None


def _logpost(design, y, xi, Q, family, phi, lf):
    eta = design @ xi + design.offset.reshape(-1)
    if family is not Family.GAUSSIAN and eta.max() > ETA_MAX:
        return -np.inf, eta, None
    st = make_state(eta, family, phi)
    ll = loglik(y, st, lf)
    return ll - 0.5 * xi @ (Q @ xi), eta, ll


def inner_mode(y, H, offset, Q, family=Family.POISSON, phi=np.inf, start=None,
               max_iter=100, gtol=1e-8, observed=False, log_yfact=None) -> InnerResult:
    """Maximise ``loglik(xi) - xi'Q xi / 2`` by Newton's method with step halving.

    Parameters
    ----------
    H : Design or ndarray
    offset : array or None
        Ignored when ``H`` is a :class:`Design` (its own offset is used).
    """
    family = Family(family)
    if isinstance(H, Design):
        design = H
    else:
        design = dense_design(H, offset)
    y = np.asarray(y, dtype=float).reshape(-1)
    lf = log_factorial(y) if log_yfact is None and family is not Family.GAUSSIAN else log_yfact
    p = design.n_coef
    if start is None:
        xi = np.zeros(p)
        if family is Family.GAUSSIAN:
            pass
        elif y.sum() > 0:
            xi[0] = np.log(y.sum() / np.exp(design.offset).sum())
        lp0 = _logpost(design, y, xi, Q, family, phi, lf)[0]
        if not np.isfinite(lp0):
            xi[:] = 0.0
    else:
        xi = np.array(start, dtype=float)
    obj, eta, ll = _logpost(design, y, xi, Q, family, phi, lf)
    if not np.isfinite(obj):
        raise NumericalError("starting point gives an overflowing linear predictor")
    trace = [obj]
    n_iter = 0
    converged = False
    for it in range(max_iter):
        st = make_state(eta, family, phi)
        score, w, _ = score_weight(y, st, observed)
        grad = design.rmatvec(score) - Q @ xi
        if np.max(np.abs(grad)) < gtol:
            converged = True
            break
        M = design.gram(w) + Q
        c = _cholesky(M, "negative Hessian")
        step = cho_solve(c, grad)
        dec = float(grad @ step)
        scale = max(1.0, abs(obj))
        t = 1.0
        accepted = False
        while t > 1e-12:
            cand = xi + t * step
            new_obj, new_eta, new_ll = _logpost(design, y, cand, Q, family, phi, lf)
            if np.isfinite(new_obj) and new_obj >= obj - 1e-13 * scale:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if dec < 1e-6 * scale:
                converged = True
                break
            raise InnerConvergenceError("line search failed to improve the objective",
                                        xi=xi, n_iter=it)
        rel = abs(new_obj - obj) / scale
        xi, obj, eta, ll = cand, new_obj, new_eta, new_ll
        trace.append(obj)
        n_iter = it + 1
        if rel < 1e-10 and dec < 1e-10 * scale:
            converged = True
            break
    if not converged:
        raise InnerConvergenceError(f"no convergence in {max_iter} Newton iterations",
                                    xi=xi, n_iter=max_iter)
    st = make_state(eta, family, phi)
    _, w, _ = score_weight(y, st, observed)
    M = design.gram(w) + Q
    c = _cholesky(M, "negative Hessian at the mode")
    sigma = cho_solve(c, np.eye(p))
    sigma = 0.5 * (sigma + sigma.T)
    logdet = 2.0 * float(np.sum(np.log(np.diag(c[0]))))
    return InnerResult(xi, sigma, obj, ll, n_iter, c, logdet, eta, trace)


@dataclass
class FitResult:
    xi_mode: np.ndarray
    sigma: np.ndarray
    hyper: Hyperparams
    dic: float
    p_d: float
    converged: bool
    iterations: dict
    log_marginal: float
    objective: float
    loglik: float
    deviance: float
    wall_time: float = 0.0
    message: str = ""
    names: tuple = ()
    layout: object = None
    family: Family = Family.POISSON


class LaplaceProblem:
    """Hyperparameter objective for a fixed design and prior structure."""

    def __init__(self, design: Design, prior: PriorPrecision, family=Family.POISSON,
                 observed=False, fixed_phi=None):
        self.design = design
        self.prior = prior
        self.family = Family(family)
        self.observed = observed
        self.y = design.y.reshape(-1)
        self.lf = None if self.family is Family.GAUSSIAN else log_factorial(self.y)
        self.k_lam = prior.penalty.n_lambda
        self.has_tau = prior.layout.u > 0
        self.has_rho = self.has_tau and prior.has_rho
        self.has_phi = self.family is Family.NEGBIN and fixed_phi is None
        self.fixed_phi = fixed_phi
        self._xi_start = None
        self._xi_warm = None
        self.n_inner = 0
        self.n_eval = 0

    # -- parameter packing
    @property
    def names(self):
        out = [f"log_{n}" for n in self.prior.penalty.lambda_names]
        if self.has_tau:
            out.append("log_tau")
        if self.has_rho:
            out.append("logit_rho")
        if self.has_phi:
            out.append("log_phi")
        return out

    def bounds(self):
        b = [BOUNDS["lambda"]] * self.k_lam
        if self.has_tau:
            b.append(BOUNDS["tau"])
        if self.has_rho:
            b.append(BOUNDS["rho"])
        if self.has_phi:
            b.append(BOUNDS["phi"])
        return b

    def pack(self, h: Hyperparams):
        out = list(np.log(h.lam))
        if self.has_tau:
            out.append(np.log(h.tau))
        if self.has_rho:
            out.append(np.log(h.rho / (1 - h.rho)))
        if self.has_phi:
            out.append(np.log(h.phi))
        return np.array(out, dtype=float)

    def unpack(self, theta) -> Hyperparams:
        theta = np.asarray(theta, dtype=float)
        k = self.k_lam
        lam = np.exp(theta[:k])
        i = k
        tau = rho = None
        phi = np.inf if self.family is not Family.NEGBIN else (self.fixed_phi or np.inf)
        if self.has_tau:
            tau = float(np.exp(theta[i]))
            i += 1
        if self.has_rho:
            rho = float(1.0 / (1.0 + np.exp(-theta[i])))
            i += 1
        if self.has_phi:
            phi = float(np.exp(theta[i]))
        return Hyperparams(lam, tau, rho, phi, lambda_names=tuple(self.prior.penalty.lambda_names))

    def default_hyper(self, lam=1.0, tau=1.0, rho=0.5, phi=100.0):
        return Hyperparams(np.full(self.k_lam, lam), tau if self.has_tau else None,
                           rho if self.has_rho else None,
                           phi if self.family is Family.NEGBIN else np.inf,
                           lambda_names=tuple(self.prior.penalty.lambda_names))

    # -- pieces
    def Q(self, h: Hyperparams):
        return self.prior.matrix(h.lam, h.tau if h.tau is not None else 1.0, h.rho)

    def log_prior(self, h: Hyperparams):
        val = 0.0
        grads = []
        v, g = log_prior_precision(h.lam)
        val += float(np.sum(v))
        grads += list(g)
        if self.has_tau:
            v, g = log_prior_precision(h.tau)
            val += float(v)
            grads.append(float(g))
        if self.has_rho:
            v, g = log_prior_rho(h.rho)
            val += v
            grads.append(g)
        if self.has_phi:
            grads.append(0.0)
        return val, np.array(grads)

    def inner(self, h: Hyperparams, start=None):
        Q = self.Q(h)
        if start is None:
            start = self._xi_warm
        try:
            res = inner_mode(self.y, self.design, None, Q, self.family, h.phi, start,
                             observed=self.observed, log_yfact=self.lf)
        except (InnerConvergenceError, NumericalError):
            if start is None:
                raise
            res = inner_mode(self.y, self.design, None, Q, self.family, h.phi, None,
                             observed=self.observed, log_yfact=self.lf)
        self.n_inner += res.n_iter
        self._xi_warm = res.xi
        return res, Q

    def objective(self, h: Hyperparams, with_grad=False, with_prior=True):
        """Laplace log posterior of the hyperparameters (gradient on the working scale)."""
        self.n_eval += 1
        res, Q = self.inner(h)
        xi = res.xi
        lam, tau, rho = h.lam, (h.tau if h.tau is not None else 1.0), h.rho
        logdetQ = self.prior.logdet(lam, tau, rho)
        F = res.loglik - 0.5 * xi @ (Q @ xi) + 0.5 * logdetQ - 0.5 * res.logdet_hess
        lp, lp_grad = self.log_prior(h)
        if with_prior:
            F += lp
        if not with_grad:
            return F, res
        return F, self._gradient(h, res, Q, lp_grad if with_prior else 0.0 * lp_grad), res

    def _gradient(self, h, res, Q, prior_grad):
        xi, sigma = res.xi, res.sigma
        lam, tau, rho = h.lam, (h.tau if h.tau is not None else 1.0), h.rho
        st = make_state(res.eta, self.family, h.phi)
        score, w, dw = score_weight(self.y, st, self.observed)
        need_lev = np.any(dw != 0)
        if need_lev:
            lev = self.design.leverages(sigma)
            if self.family is Family.NEGBIN and not self.observed:
                _, w_obs, _ = score_weight(self.y, st, True)
                c_obs = _cholesky(self.design.gram(w_obs) + Q, "observed negative Hessian")
            else:
                c_obs = res.chol
        terms = self.prior.derivative_terms(lam, tau, rho)
        grad = np.zeros(len(terms) + (1 if self.has_phi else 0))
        p = xi.size
        rhs = np.zeros((p, len(terms)))
        for k, (s, B, trq) in enumerate(terms):
            Bx = B @ xi[s]
            grad[k] = -0.5 * xi[s] @ Bx + 0.5 * trq - 0.5 * np.sum(sigma[s, s] * B)
            rhs[s, k] = Bx
        if need_lev:
            dxi = -cho_solve(c_obs, rhs)
            deta = self.design @ dxi
            grad[: len(terms)] -= 0.5 * ((lev * dw) @ deta)
        if self.has_phi:
            phi = h.phi
            mu = st.mu
            g_phi = dloglik_dphi(self.y, mu, phi)
            dxi_phi = cho_solve(c_obs, self.design.rmatvec(dscore_dphi(self.y, mu, phi)))
            deta_phi = self.design @ dxi_phi
            dw_phi = dweight_dphi(self.y, mu, phi, self.observed)
            g_phi -= 0.5 * np.sum(lev * (dw_phi + dw * deta_phi))
            grad[-1] = phi * g_phi
        return grad + prior_grad

    # -- outer optimisation
    def optimize(self, initial: Hyperparams | None = None, maxfun=200, method="analytic"):
        """Posterior mode of the hyperparameters with L-BFGS-B.

        ``method='fd'`` uses finite-difference gradients instead of the analytic ones.
        """
        t0 = time.perf_counter()
        h0 = initial or self.default_hyper()
        theta0 = np.clip(self.pack(h0), *np.array(self.bounds()).T)
        best = {"F": -np.inf, "theta": theta0}
        fail_value = [None]

        def fun(theta):
            h = self.unpack(theta)
            try:
                if method == "fd":
                    F, res = self.objective(h)
                    g = None
                else:
                    F, g, res = self.objective(h, with_grad=True)
            except (InnerConvergenceError, NumericalError):
                big = fail_value[0] if fail_value[0] is not None else 1e10
                return (big, np.zeros_like(theta)) if method != "fd" else big
            if F > best["F"]:
                best.update(F=F, theta=np.array(theta), xi=res.xi)
            fail_value[0] = abs(best["F"]) * 10 + 1e6
            return (-F, -g) if method != "fd" else -F

        if theta0.size == 0:
            return self._finish(h0, None, t0)
        opt = minimize(fun, theta0, jac=(method != "fd"), method="L-BFGS-B",
                       bounds=self.bounds(), options={"maxfun": maxfun, "maxiter": maxfun})
        if not np.isfinite(best["F"]):
            raise NumericalError("no hyperparameter value gave a finite objective")
        self._xi_warm = best["xi"]
        return self._finish(self.unpack(best["theta"]), opt, t0)

    def _finish(self, h, opt, t0):
        F, res = self.objective(h)
        Q = self.Q(h)
        dic, p_d, dev = compute_dic(res, Q, self.y, self.design, self.family, h.phi)
        lp, _ = self.log_prior(h)
        converged = True if opt is None else bool(opt.success)
        return FitResult(
            xi_mode=res.xi, sigma=res.sigma, hyper=h, dic=dic, p_d=p_d, converged=converged,
            iterations={"outer": 0 if opt is None else int(opt.nit), "evaluations": int(self.n_eval),
                        "inner_total": int(self.n_inner)},
            log_marginal=float(F - lp), objective=float(F), loglik=float(res.loglik),
            deviance=dev, wall_time=time.perf_counter() - t0, message="" if opt is None else str(opt.message),
            names=tuple(self.prior.layout.names()), layout=self.prior.layout, family=self.family,
        )


def hyper_objective(hyper: Hyperparams, problem: LaplaceProblem) -> float:
    return problem.objective(hyper)[0]


def hyper_optimize(initial: Hyperparams | None, problem: LaplaceProblem, **kw) -> FitResult:
    return problem.optimize(initial, **kw)


def compute_dic(fit, Q, y, design, family=Family.POISSON, phi=np.inf):
    """``(DIC, p_D, D)`` with ``p_D = n_xi - tr(Q Sigma)`` and ``D = -2 loglik(xi_hat)``."""
    xi = fit.xi_mode if isinstance(fit, FitResult) else fit.xi
    sigma = fit.sigma
    if not isinstance(design, Design):
        design = dense_design(design)
    eta = design @ xi + design.offset.reshape(-1)
    ll = loglik(np.asarray(y, dtype=float).reshape(-1), make_state(eta, family, phi))
    D = -2.0 * ll
    p_d = xi.size - float(np.sum(Q * sigma))
    return D + 2.0 * p_d, p_d, D
