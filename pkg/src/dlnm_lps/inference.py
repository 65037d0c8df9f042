"""Relative risks and derived quantities from a fitted model.

All intervals come from one seeded set of draws of the exposure coefficients
``(theta1, theta2)`` from the Laplace Gaussian. Log-RR contrasts are linear in
these coefficients: at modifier value ``z`` the effective cross-basis
coefficients are ``theta1 + sum_r c_r(z) theta2_r``.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .basis import eval_basis
from .errors import DomainError, ShapeError, SpecError

OVERALL = -1  # lag code for the cumulative (summed over lags) log-RR


@dataclass(frozen=True)
class RRQuery:
    x: tuple
    x0: float
    z: tuple = (0.0,)
    lags: object = "overall"  # "overall", "all", or an iterable of lag indices
    n_draws: int = 2000
    seed: int = 0
    keep_draws: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(np.atleast_1d(self.x).astype(float)))
        object.__setattr__(self, "z", tuple(np.atleast_1d(self.z).astype(float)))
        if self.n_draws < 1:
            raise SpecError("n_draws must be positive")


@dataclass
class RRSurface:
    """Log-RR over ``(x, z, lag)``; lag code ``-1`` is the overall effect."""

    x: np.ndarray
    z: np.ndarray
    lags: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sd: np.ndarray
    draws: np.ndarray | None = None
    x0: float = 0.0

    @property
    def gauss_lower(self):
        return self.estimate - norm.ppf(0.975) * self.sd

    @property
    def gauss_upper(self):
        return self.estimate + norm.ppf(0.975) * self.sd

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "z", "lag", "estimate", "lo", "hi", "gauss_lo", "gauss_hi"])
            gl, gu = self.gauss_lower, self.gauss_upper
            for a, xv in enumerate(self.x):
                for b, zv in enumerate(self.z):
                    for c, lag in enumerate(self.lags):
                        w.writerow([_f(xv), _f(zv), "overall" if lag == OVERALL else int(lag),
                                    _f(self.estimate[a, b, c]), _f(self.lower[a, b, c]),
                                    _f(self.upper[a, b, c]), _f(gl[a, b, c]), _f(gu[a, b, c])])


def _f(v):
    return "%.17g" % float(v)


def _theta_blocks(fit):
    lay = fit.layout
    s1, s2 = lay.slice("theta1"), lay.slice("theta2")
    return s1, s2, lay.theta1, lay.theta2 // max(lay.theta1, 1) if lay.theta2 else 0


def theta_draws(fit, n_draws, seed):
    """``(mean, draws)`` of the stacked ``(theta1, theta2)`` vector; draws have shape (n_draws, k)."""
    s1, s2, _, _ = _theta_blocks(fit)
    idx = np.r_[np.arange(s1.start, s1.stop), np.arange(s2.start, s2.stop)]
    mean = fit.xi_mode[idx]
    S = fit.sigma[np.ix_(idx, idx)]
    S = 0.5 * (S + S.T)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(S)
        L = vecs * np.sqrt(np.clip(vals, 0.0, None))
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n_draws, idx.size))
    return mean, S, mean + eps @ L.T


def _modifier_rows(modifier_spec, z, n_theta2_blocks):
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if modifier_spec is None or n_theta2_blocks == 0:
        return np.zeros((z.size, 0))
    return eval_basis(modifier_spec, z)


def _effective_map(c_row, vxl):
    """Matrix mapping the stacked (theta1, theta2) to theta1 + sum_r c_r theta2_r."""
    return np.hstack([np.eye(vxl)] + [c * np.eye(vxl) for c in c_row])


def _check_x(cb, x):
    lo, hi = cb.exposure_spec.boundary
    x = np.atleast_1d(np.asarray(x, dtype=float))
    bad = (x < lo - 1e-10 * (hi - lo)) | (x > hi + 1e-10 * (hi - lo))
    if np.any(bad):
        raise DomainError(f"exposure {x[bad][0]!r} outside basis span [{lo}, {hi}]")
    return x


def _contrast_rows(cb, x, x0, lags):
    """Rows (len(x) * len(lags), v_x v_l) of the contrast vectors; lag code -1 = overall."""
    x = _check_x(cb, x)
    _check_x(cb, [x0])
    lag_idx = [l for l in lags if l != OVERALL]
    lc = cb.lag_contrasts(x, x0, lag_idx) if lag_idx else None
    ov = cb.overall_contrasts(x, x0) if OVERALL in lags else None
    out = np.zeros((x.size, len(lags), cb.W.shape[1]))
    k = 0
    for c, lag in enumerate(lags):
        if lag == OVERALL:
            out[:, c] = ov
        else:
            out[:, c] = lc[:, k]
            k += 1
    return out


def _resolve_lags(cb, lags):
    if isinstance(lags, str):
        if lags == "overall":
            return [OVERALL]
        if lags == "all":
            return list(range(cb.max_lag + 1)) + [OVERALL]
        raise SpecError(f"unknown lag selection {lags!r}")
    out = []
    for l in lags:
        if l == "overall" or l == OVERALL:
            out.append(OVERALL)
        else:
            l = int(l)
            if not 0 <= l <= cb.max_lag:
                raise DomainError(f"lag {l} outside 0..{cb.max_lag}")
            out.append(l)
    return out


def log_rr(fit, cb, modifier_spec, query: RRQuery) -> RRSurface:
    """Lag-specific and/or overall log-RR of ``x`` versus ``x0`` at modifier values ``z``."""
    lags = _resolve_lags(cb, query.lags)
    x = np.asarray(query.x)
    zs = np.asarray(query.z)
    C = _contrast_rows(cb, x, query.x0, lags)  # (nx, nl, vxl)
    nx, nl, vxl = C.shape
    _, _, _, n2 = _theta_blocks(fit)
    mean, S, draws = theta_draws(fit, query.n_draws, query.seed)
    Cr = _modifier_rows(modifier_spec, zs, n2)
    est = np.zeros((nx, zs.size, nl))
    lo = np.zeros_like(est)
    hi = np.zeros_like(est)
    sd = np.zeros_like(est)
    kept = np.zeros((nx, zs.size, nl, query.n_draws)) if query.keep_draws else None
    flat = C.reshape(nx * nl, vxl)
    zero = ~np.any(flat != 0, axis=1)
    for b in range(zs.size):
        A = _effective_map(Cr[b] if Cr.shape[1] else (), vxl)
        th = draws @ A.T  # effective coefficients per draw
        e = flat @ (A @ mean)
        d = th @ flat.T  # (n_draws, nx*nl)
        q = np.quantile(d, [0.025, 0.975], axis=0)
        q[:, zero] = 0.0
        Sz = A @ S @ A.T
        est[:, b, :] = e.reshape(nx, nl)
        lo[:, b, :] = q[0].reshape(nx, nl)
        hi[:, b, :] = q[1].reshape(nx, nl)
        sd[:, b, :] = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", flat, Sz, flat), 0.0)).reshape(nx, nl)
        if kept is not None:
            kept[:, b] = d.T.reshape(nx, nl, -1)
    # the point estimate is the posterior mode; keep the interval consistent with it
    lo = np.minimum(lo, est)
    hi = np.maximum(hi, est)
    return RRSurface(x.astype(float), zs.astype(float), np.array(lags), est, lo, hi, sd, kept,
                     float(query.x0))


def _overall_draws(fit, cb, modifier_spec, x, x0, z, n_draws, seed):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    C = _contrast_rows(cb, x, x0, [OVERALL])[:, 0]
    _, _, _, n2 = _theta_blocks(fit)
    mean, _, draws = theta_draws(fit, n_draws, seed)
    cr = _modifier_rows(modifier_spec, [z], n2)[0] if n2 else ()
    G = C @ _effective_map(cr, C.shape[1])
    return G @ mean, draws @ G.T, G


@dataclass
class RRRCurve:
    x: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    z_hi: float
    z_lo: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "rrr", "lo", "hi"])
            for row in zip(self.x, self.estimate, self.lower, self.upper):
                w.writerow([_f(v) for v in row])


def rrr(fit, cb, modifier_spec, x, x0, z_hi, z_lo, n_draws=2000, seed=0) -> RRRCurve:
    """Ratio of overall RRs between modifier levels ``z_hi`` and ``z_lo`` (paired draws)."""
    e_hi, d_hi, _ = _overall_draws(fit, cb, modifier_spec, x, x0, z_hi, n_draws, seed)
    e_lo, d_lo, _ = _overall_draws(fit, cb, modifier_spec, x, x0, z_lo, n_draws, seed)
    diff = d_hi - d_lo
    q = np.quantile(diff, [0.025, 0.975], axis=0)
    est = e_hi - e_lo
    return RRRCurve(np.atleast_1d(np.asarray(x, dtype=float)), np.exp(est),
                    np.exp(np.minimum(q[0], est)), np.exp(np.maximum(q[1], est)),
                    float(z_hi), float(z_lo))


@dataclass
class ExceedanceGrid:
    x: np.ndarray
    z: np.ndarray
    prob: np.ndarray  # (nx, nz)
    degenerate: np.ndarray  # True where the contrast is identically zero
    threshold: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "z", "prob", "degenerate"])
            for a, xv in enumerate(self.x):
                for b, zv in enumerate(self.z):
                    w.writerow([_f(xv), _f(zv), _f(self.prob[a, b]), int(self.degenerate[a, b])])


def exceedance_prob(fit, cb, modifier_spec, x, z, x0, threshold=1.0, n_draws=2000, seed=0):
    """Posterior probability that the overall RR exceeds ``threshold``.

    A contrast that is identically zero (``x == x0``) is reported as 0 for
    ``threshold >= 1`` and flagged in ``degenerate``.
    """
    if threshold < 0:
        raise SpecError("threshold must be non-negative")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    prob = np.zeros((x.size, z.size))
    degen = np.zeros_like(prob, dtype=bool)
    log_t = np.log(threshold) if threshold > 0 else -np.inf
    for b, zv in enumerate(z):
        _, d, G = _overall_draws(fit, cb, modifier_spec, x, x0, zv, n_draws, seed)
        zero = ~np.any(G != 0, axis=1)
        prob[:, b] = np.mean(d > log_t, axis=0)
        degen[:, b] = zero
        prob[zero, b] = 1.0 if threshold < 1 else 0.0
    return ExceedanceGrid(x, z, prob, degen, float(threshold))


@dataclass
class AFTable:
    area_ids: tuple
    af: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    cf_af: np.ndarray | None = None
    cf_lower: np.ndarray | None = None
    cf_upper: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        rows = []
        for k, area in enumerate(self.area_ids):
            row = {"area": area, "AF": float(self.af[k]), "lo": float(self.lower[k]),
                   "hi": float(self.upper[k])}
            if self.cf_af is not None:
                row.update(cf_AF=float(self.cf_af[k]), cf_lo=float(self.cf_lower[k]),
                           cf_hi=float(self.cf_upper[k]))
            rows.append(row)
        return rows

    def write_json(self, path, meta=None):
        with open(path, "w") as fh:
            json.dump({"meta": meta or {}, "rows": self.to_json()}, fh, indent=2, sort_keys=True)


def _area_af(theta_z, Wd, mu):
    """Weighted AF for one area: ``theta_z`` (k, vxl) or (vxl,), ``Wd`` (n, vxl) centered rows."""
    eff = Wd @ np.atleast_2d(theta_z).T  # (n, k)
    af = 1.0 - np.exp(-eff)
    return (mu @ af) / mu.sum()


def attributable_fraction(fit, panel, cb, modifier_spec, x0, mu, period=None, per_area=True,
                          counterfactual_z=None, n_draws=2000, seed=0) -> AFTable:
    """Backward attributable fraction per area (plus a pooled ``"all"`` row).

    Parameters
    ----------
    mu : (J, T) array
        Posterior-mode fitted means used as weights.
    period : (start, stop) time indices, optional
        Half-open window of time points; defaults to all rows with a full history.
    counterfactual_z : per-area values or dict area_id -> value, optional
        Replaces each area's modifier inside the RR contrast only.
    """
    J, T = panel.counts.shape
    L = cb.max_lag
    start, stop = (L, T) if period is None else (int(period[0]), int(period[1]))
    if not 0 <= start < stop <= T:
        raise SpecError(f"period {period} outside 0..{T}")
    if stop - start < L + 1:
        warnings.warn("attribution period shorter than max_lag + 1", stacklevel=2)
    start = max(start, L)
    if start >= stop:
        raise SpecError("no time point in the period has a full lag history")
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (J, T):
        raise ShapeError(f"mu must have shape {(J, T)}")
    z_obs = panel.modifier if panel.modifier is not None else np.zeros(J)
    cf = None
    if counterfactual_z is not None:
        if isinstance(counterfactual_z, dict):
            missing = [a for a in panel.area_ids if a not in counterfactual_z]
            if missing:
                raise SpecError(f"counterfactual modifier missing for areas {missing}")
            cf = np.array([float(counterfactual_z[a]) for a in panel.area_ids])
        else:
            cf = np.asarray(counterfactual_z, dtype=float).reshape(-1)
            if cf.size != J:
                raise SpecError(f"counterfactual modifier needs {J} values, got {cf.size}")
    _, _, vxl, n2 = _theta_blocks(fit)
    mean, _, draws = theta_draws(fit, n_draws, seed)
    w0 = np.kron(eval_basis(cb.exposure_spec, [x0])[0], cb.lag_basis.sum(axis=0))
    Wfull = cb.W.reshape(J, T, vxl)

    def table(zvals):
        Cr = _modifier_rows(modifier_spec, zvals, n2)
        est = np.zeros(J)
        qd = np.zeros((J, n_draws))
        num_pt = 0.0
        num_d = np.zeros(n_draws)
        den = 0.0
        for j in range(J):
            A = _effective_map(Cr[j] if Cr.shape[1] else (), vxl)
            Wd = Wfull[j, start:stop] - w0
            m = mu[j, start:stop]
            est[j] = _area_af(A @ mean, Wd, m)[0]
            qd[j] = _area_af(draws @ A.T, Wd, m)
            num_pt += est[j] * m.sum()
            num_d += qd[j] * m.sum()
            den += m.sum()
        q = np.quantile(qd, [0.025, 0.975], axis=1)
        pooled = num_pt / den
        pq = np.quantile(num_d / den, [0.025, 0.975])
        return (np.r_[est, pooled], np.r_[np.minimum(q[0], est), min(pq[0], pooled)],
                np.r_[np.maximum(q[1], est), max(pq[1], pooled)])

    af, lo, hi = table(z_obs)
    ids = tuple(panel.area_ids) + ("all",)
    out = AFTable(ids, af, lo, hi, extra={"period": [int(start), int(stop)], "x0": float(x0)})
    if cf is not None:
        out.cf_af, out.cf_lower, out.cf_upper = table(cf)
    if not per_area:
        keep = [len(ids) - 1]
        out = AFTable(("all",), af[keep], lo[keep], hi[keep],
                      None if cf is None else out.cf_af[keep],
                      None if cf is None else out.cf_lower[keep],
                      None if cf is None else out.cf_upper[keep], out.extra)
    return out
