"""Model specification, design assembly and prior precision.

The coefficient vector is stacked as ``xi = (beta, gamma, theta1, theta2, u)``:

* ``beta``   -- fixed effects (intercept, covariates, factor dummies, trend spline)
* ``gamma``  -- main effect of the area-level modifier ``z``
* ``theta1`` -- cross-basis coefficients (exposure-major, lag-minor)
* ``theta2`` -- interaction coefficients (modifier index slowest)
* ``u``      -- area random effects

The design is never formed densely during fitting. Each area ``j`` contributes
a small row block ``X_j = [A_j, 1, W_j]`` and a coefficient map ``E_j`` such
that the rows of H for area ``j`` equal ``X_j @ E_j``. All products with H,
including ``H' diag(w) H`` and the leverages ``diag(H S H')``, go through this
factorisation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .basis import (DEFAULT_RIDGE, DEFAULT_ZETA, BasisKind, bspline_spec, dummy_spec,
                    eval_basis, lag_knots_log, lag_shrink_block, linear_spec, natural_spec,
                    penalty_block)
from .crossbasis import (CrossBasis, InteractionBasis, build_crossbasis, build_history,
                         build_interaction)
from .errors import ConsistencyError, NumericalError, ShapeError, SpecError
from .panel import TimeSeriesPanel, day_of_week, year_fraction
from .spatial import SpatialKind, SpatialPrecision, SpatialSpec


class Family(str, Enum):
    POISSON = "poisson"
    NEGBIN = "negbin"
    GAUSSIAN = "gaussian"  # unit-variance identity link, for checks only


class Modifier(str, Enum):
    NONE = "none"
    LINEAR = "linear"
    SMOOTH = "smooth"
    CATEGORICAL = "categorical"


class MainEffect(str, Enum):
    NONE = "none"
    LINEAR = "linear"
    SMOOTH = "smooth"
    DUMMY = "dummy"


_DEFAULT_MAIN = {
    Modifier.NONE: MainEffect.NONE,
    Modifier.LINEAR: MainEffect.LINEAR,
    Modifier.SMOOTH: MainEffect.LINEAR,
    Modifier.CATEGORICAL: MainEffect.DUMMY,
}


@dataclass(frozen=True)
class ModelSpec:
    """Switches and dimensions of a DLNM with spatial effect modification.

    ``v_x`` counts exposure basis columns after the intercept column is
    dropped; ``v_l`` counts lag basis columns (the lag basis keeps its
    intercept). With ``penalized=False`` every non-spatial block gets the
    small ridge ``zeta`` and natural splines are the natural choice of basis.
    """

    family: Family = Family.POISSON
    modifier: Modifier = Modifier.NONE
    main_effect_z: MainEffect | None = None
    spatial: SpatialSpec = field(default_factory=SpatialSpec)
    v_x: int = 8
    v_l: int = 8
    v_z: int = 5
    v_z2: int = 10
    n_categories: int | None = None
    max_lag: int = 8
    lag_shrink: bool = False
    diff_order: int = 2
    ridge: float = DEFAULT_RIDGE
    zeta: float = DEFAULT_ZETA
    penalized: bool = True
    exposure_basis: str = "bspline"
    lag_basis: str = "bspline"
    exposure_range: tuple | None = None
    modifier_range: tuple | None = None
    covariates: tuple = ()
    factors: tuple = ()
    day_of_week: bool = False
    trend_df: int = 0
    observed_information: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "modifier", Modifier(self.modifier))
        main = _DEFAULT_MAIN[self.modifier] if self.main_effect_z is None else self.main_effect_z
        object.__setattr__(self, "main_effect_z", MainEffect(main))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "factors", tuple(self.factors))
        self.validate()

    def validate(self):
        mod, main = self.modifier, self.main_effect_z
        if mod is Modifier.SMOOTH and main not in (MainEffect.SMOOTH, MainEffect.LINEAR):
            raise SpecError("a smooth modifier needs a smooth or linear main effect of z")
        if mod is Modifier.CATEGORICAL and main is not MainEffect.DUMMY:
            raise SpecError("a categorical modifier needs a dummy main effect of z")
        if (mod is Modifier.CATEGORICAL or main is MainEffect.DUMMY) and (
                self.n_categories is None or self.n_categories < 2):
            raise SpecError("categorical modifier / dummy main effect need n_categories >= 2")
        if mod is Modifier.LINEAR and main in (MainEffect.DUMMY,):
            raise SpecError("a linear modifier cannot be paired with a dummy main effect")
        if self.max_lag < 0:
            raise SpecError("max_lag must be non-negative")
        if self.v_x < 1 or self.v_l < 1:
            raise SpecError("v_x and v_l must be positive")
        if self.penalized:
            if self.v_x <= self.diff_order or self.v_l <= self.diff_order:
                raise SpecError("penalized bases need more columns than the difference order")
            if mod is Modifier.SMOOTH and self.v_z <= self.diff_order:
                raise SpecError("v_z must exceed the difference order")
        if self.v_l > self.max_lag + 1:
            raise SpecError(f"v_l={self.v_l} exceeds the number of lags {self.max_lag + 1}")
        if self.exposure_basis not in ("bspline", "natural") or self.lag_basis not in ("bspline", "natural"):
            raise SpecError("bases must be 'bspline' or 'natural'")
        if not (self.ridge > 0 and self.zeta > 0):
            raise SpecError("ridge and zeta must be positive")
        if self.trend_df < 0 or self.trend_df == 1:
            raise SpecError("trend_df must be 0 (no trend) or >= 2")

    @property
    def uses_z(self):
        return self.modifier is not Modifier.NONE or self.main_effect_z is not MainEffect.NONE

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class BlockLayout:
    beta: int
    gamma: int
    theta1: int
    theta2: int
    u: int
    beta_names: tuple = ()

    @property
    def n_xi(self):
        return self.beta + self.gamma + self.theta1 + self.theta2 + self.u

    def offset(self, name):
        order = ("beta", "gamma", "theta1", "theta2", "u")
        return sum(getattr(self, b) for b in order[: order.index(name)])

    def slice(self, name):
        start = self.offset(name)
        return slice(start, start + getattr(self, name))

    def names(self):
        out = list(self.beta_names) or [f"beta_{i}" for i in range(self.beta)]
        out += [f"gamma_{i}" for i in range(self.gamma)]
        out += [f"theta1_{i}" for i in range(self.theta1)]
        out += [f"theta2_{i}" for i in range(self.theta2)]
        out += [f"u_{i}" for i in range(self.u)]
        return out


# --------------------------------------------------------------------------
# bases implied by a spec

def exposure_basis_spec(spec: ModelSpec, exposure_values):
    lo, hi = spec.exposure_range or (float(np.nanmin(exposure_values)), float(np.nanmax(exposure_values)))
    if not hi > lo:
        raise SpecError("exposure has zero range")
    if spec.exposure_basis == "bspline":
        # cubic unless too few columns; v_x=1 leaves a single linear ramp
        return bspline_spec(lo, hi, spec.v_x, degree=min(3, spec.v_x), intercept=False)
    # natural: v_x columns without intercept need v_x - 1 interior knots
    n_int = spec.v_x - 1
    if n_int < 1:
        raise SpecError("natural exposure basis needs v_x >= 2")
    probs = [0.1, 0.9] if n_int == 2 else np.linspace(0.1, 0.9, n_int)
    vals = np.asarray(exposure_values, dtype=float)
    interior = np.unique(np.quantile(vals[np.isfinite(vals)], probs))
    if interior.size != n_int:
        raise SpecError("exposure quantile knots are not distinct")
    return natural_spec(lo, hi, interior, intercept=False)


def lag_basis_spec(spec: ModelSpec):
    L = spec.max_lag
    if L == 0:
        if spec.v_l != 1:
            raise SpecError("max_lag = 0 allows only v_l = 1")
        return bspline_spec(0.0, 1.0, 1, degree=0)
    if spec.lag_basis == "bspline":
        degree = min(3, spec.v_l - 1)
        return bspline_spec(0.0, float(L), spec.v_l, degree=degree)
    if spec.v_l < 2:
        raise SpecError("natural lag basis needs v_l >= 2")
    return natural_spec(0.0, float(L), lag_knots_log(L, spec.v_l - 2))


def modifier_basis_spec(spec: ModelSpec, z, which="interaction"):
    """Basis ``c(z)`` of the interaction (``which='interaction'``) or ``d(z)`` of the main effect."""
    kind = spec.modifier if which == "interaction" else spec.main_effect_z
    kind = kind.value
    if kind == "none":
        return None
    if kind == "linear":
        return linear_spec()
    if kind in ("categorical", "dummy"):
        return dummy_spec(spec.n_categories)
    lo, hi = spec.modifier_range or (float(np.min(z)), float(np.max(z)))
    if not hi > lo:
        raise SpecError("modifier has zero range; a smooth basis is not identifiable")
    v = spec.v_z if which == "interaction" else spec.v_z2
    return bspline_spec(lo, hi, v, intercept=False)


# --------------------------------------------------------------------------
# penalty

@dataclass(frozen=True)
class PenaltyGroup:
    """Penalty on one contiguous coefficient block, ``const*I + sum_k lam_k T_k``.

    Each ``T_k`` is ``I (x) ... (x) S_k (x) ... (x) I`` over the block's tensor
    dimensions ``dims``, so all terms share an eigenbasis and
    ``eig = const + sum_k lam_k * eigvals_k``.
    """

    block: str
    dims: tuple
    terms: tuple  # (lambda index, template matrix, eigenvalue vector)
    const: float = 0.0
    local_start: int = 0  # offset inside ``block`` (used by the trend sub-block)

    @property
    def size(self):
        return int(np.prod(self.dims))

    def matrix(self, lam):
        M = self.const * np.eye(self.size)
        for k, T, _ in self.terms:
            M = M + lam[k] * T
        return M

    def eigvals(self, lam):
        e = np.full(self.size, self.const)
        for k, _, ev in self.terms:
            e = e + lam[k] * ev
        return e


def _kron_term(dims, axis, S, ridge=0.0):
    """Template ``I (x) S (x) I`` and its eigenvalues.

    ``S`` contains ``ridge * I``; the ridge is removed before the eigen
    decomposition and added back exactly, so null-space eigenvalues equal
    ``ridge`` instead of ``ridge`` plus rounding noise.
    """
    mats = [np.eye(d) for d in dims]
    mats[axis] = S
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    ev = np.linalg.eigvalsh(S - ridge * np.eye(S.shape[0]))
    ev[np.abs(ev) < 1e-10 * max(1.0, np.abs(ev).max())] = 0.0
    ev = ev + ridge
    shape = [1] * len(dims)
    shape[axis] = dims[axis]
    full = np.broadcast_to(ev.reshape(shape), dims).ravel()
    return out, full.copy()


@dataclass(frozen=True)
class PenaltyAssembly:
    groups: tuple
    lambda_names: tuple

    @property
    def n_lambda(self):
        return len(self.lambda_names)

    def group(self, block):
        for g in self.groups:
            if g.block == block:
                return g
        raise KeyError(block)

    def block(self, block, lam):
        return self.group(block).matrix(np.asarray(lam, dtype=float))

    def assemble(self, lam):
        """P over the (gamma, theta1, theta2) blocks, block-diagonal in that order."""
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.n_lambda,):
            raise SpecError(f"expected {self.n_lambda} smoothing parameters {self.lambda_names}")
        mats = [g.matrix(lam) for g in self.groups if g.block in ("gamma", "theta1", "theta2")]
        return _blockdiag(mats)

    def logdet(self, lam):
        return float(sum(np.sum(np.log(g.eigvals(lam))) for g in self.groups))


def _blockdiag(mats):
    n = sum(m.shape[0] for m in mats)
    out = np.zeros((n, n))
    i = 0
    for m in mats:
        k = m.shape[0]
        out[i:i + k, i:i + k] = m
        i += k
    return out


def _gamma_size(spec: ModelSpec):
    main = spec.main_effect_z
    if main is MainEffect.NONE:
        return 0
    if main is MainEffect.LINEAR:
        return 1
    if main is MainEffect.SMOOTH:
        return spec.v_z2
    return spec.n_categories - 1


def _vz(spec: ModelSpec):
    return {Modifier.NONE: 0, Modifier.LINEAR: 1, Modifier.SMOOTH: spec.v_z,
            Modifier.CATEGORICAL: (spec.n_categories or 1) - 1}[spec.modifier]


def assemble_penalty(spec: ModelSpec) -> PenaltyAssembly:
    """Penalty templates for the gamma, theta1, theta2 (and trend) blocks."""
    vx, vl, m, delta, zeta = spec.v_x, spec.v_l, spec.diff_order, spec.ridge, spec.zeta
    mod = spec.modifier
    groups = []
    ng = _gamma_size(spec)
    vz = _vz(spec)
    if not spec.penalized:
        if ng:
            groups.append(PenaltyGroup("gamma", (ng,), (), zeta))
        groups.append(PenaltyGroup("theta1", (vx * vl,), (), zeta))
        if vz:
            groups.append(PenaltyGroup("theta2", (vz * vx * vl,), (), zeta))
        names = []
        if spec.trend_df:
            names.append("lambda_trend")
            groups.append(_trend_group(spec, len(names) - 1))
        return PenaltyAssembly(tuple(groups), tuple(names))

    Sx = penalty_block(vx, m, delta).matrix
    Sl = penalty_block(vl, m, delta).matrix
    if spec.lag_shrink:
        Sl = Sl + lag_shrink_block(vl, delta).matrix - delta * np.eye(vl)
    if mod is Modifier.NONE:
        names = ["lambda_x1", "lambda_l1"]
        ix1, il1 = 0, 1
    elif mod in (Modifier.LINEAR, Modifier.CATEGORICAL):
        names = ["lambda_x1", "lambda_x2", "lambda_l1", "lambda_l2"]
        ix1, ix2, il1, il2 = 0, 1, 2, 3
    else:
        names = ["lambda_x1", "lambda_x2", "lambda_l1", "lambda_l2", "lambda_z"]
        ix1, ix2, il1, il2, iz = 0, 1, 2, 3, 4

    if ng:
        if spec.main_effect_z is MainEffect.SMOOTH:
            names.append("lambda_z2")
            Sz2 = penalty_block(ng, m, delta).matrix
            T, ev = _kron_term((ng,), 0, Sz2, delta)
            groups.append(PenaltyGroup("gamma", (ng,), ((len(names) - 1, T, ev),)))
        else:
            groups.append(PenaltyGroup("gamma", (ng,), (), zeta))

    d1 = (vx, vl)
    groups.append(PenaltyGroup("theta1", d1, (
        (ix1, *_kron_term(d1, 0, Sx, delta)),
        (il1, *_kron_term(d1, 1, Sl, delta)),
    )))
    if mod in (Modifier.LINEAR,):
        groups.append(PenaltyGroup("theta2", d1, (
            (ix2, *_kron_term(d1, 0, Sx, delta)),
            (il2, *_kron_term(d1, 1, Sl, delta)),
        )))
    elif mod is Modifier.CATEGORICAL:
        d2 = (vz, vx, vl)
        groups.append(PenaltyGroup("theta2", d2, (
            (ix2, *_kron_term(d2, 1, Sx, delta)),
            (il2, *_kron_term(d2, 2, Sl, delta)),
        )))
    elif mod is Modifier.SMOOTH:
        d2 = (vz, vx, vl)
        Sz = penalty_block(vz, m, delta).matrix
        groups.append(PenaltyGroup("theta2", d2, (
            (ix2, *_kron_term(d2, 1, Sx, delta)),
            (il2, *_kron_term(d2, 2, Sl, delta)),
            (iz, *_kron_term(d2, 0, Sz, delta)),
        )))
    if spec.trend_df:
        names.append("lambda_trend")
        groups.append(_trend_group(spec, len(names) - 1))
    return PenaltyAssembly(tuple(groups), tuple(names))


def _trend_group(spec, index):
    v = spec.trend_df
    S = penalty_block(v, min(spec.diff_order, v - 1), spec.ridge).matrix
    T, ev = _kron_term((v,), 0, S, spec.ridge)
    # the trend columns sit at the end of the beta block; local_start is resolved by the layout
    return PenaltyGroup("trend", (v,), ((index, T, ev),))


# --------------------------------------------------------------------------
# joint prior precision Q = blkdiag(zeta I, P(lambda), G)

class PriorPrecision:
    """Q(lambda, tau, rho) with eigen-based log-determinants and derivative pieces.

    Hyperparameters enter on the working scale ``(log lambda..., log tau,
    [logit rho])``.
    """

    def __init__(self, penalty: PenaltyAssembly, layout: BlockLayout, spatial: SpatialSpec,
                 zeta=DEFAULT_ZETA):
        self.penalty = penalty
        self.layout = layout
        self.spatial = spatial
        self.zeta = zeta
        self.sp = SpatialPrecision(spatial, layout.u) if layout.u else None
        self._slices = []
        for g in penalty.groups:
            if g.block == "trend":
                start = layout.offset("beta") + layout.beta - g.size
            else:
                start = layout.offset(g.block)
                if g.size != getattr(layout, g.block):
                    raise ConsistencyError(f"penalty block {g.block} has size {g.size}, "
                                           f"layout expects {getattr(layout, g.block)}")
            self._slices.append(slice(start, start + g.size))
        n_trend = sum(g.size for g in penalty.groups if g.block == "trend")
        self.n_beta_fixed = layout.beta - n_trend
        covered = sum(g.size for g in penalty.groups if g.block in ("gamma", "theta1", "theta2"))
        expect = layout.gamma + layout.theta1 + layout.theta2
        if covered != expect:
            raise ConsistencyError("penalty groups do not cover the gamma/theta blocks")

    @property
    def has_rho(self):
        return self.spatial.has_rho

    @property
    def names(self):
        out = list(self.penalty.lambda_names)
        if self.layout.u:
            out.append("tau")
            if self.has_rho:
                out.append("rho")
        return out

    def matrix(self, lam, tau=1.0, rho=None):
        lam = np.asarray(lam, dtype=float)
        n = self.layout.n_xi
        Q = np.zeros((n, n))
        b = self.layout.slice("beta")
        Q[b, b] = self.zeta * np.eye(self.layout.beta)
        for g, s in zip(self.penalty.groups, self._slices):
            Q[s, s] = g.matrix(lam)
        if self.layout.u:
            u = self.layout.slice("u")
            Q[u, u] = self.sp.matrix(tau, rho)
        return Q

    def logdet(self, lam, tau=1.0, rho=None):
        val = self.n_beta_fixed * np.log(self.zeta) + self.penalty.logdet(lam)
        if self.layout.u:
            val += self.sp.logdet(tau, rho)
        return float(val)

    def derivative_terms(self, lam, tau=1.0, rho=None):
        """Per working-scale hyperparameter: ``(slice, dQ block, tr(Q^-1 dQ))``."""
        lam = np.asarray(lam, dtype=float)
        out = [None] * self.penalty.n_lambda
        for g, s in zip(self.penalty.groups, self._slices):
            eig = g.eigvals(lam)
            for k, T, ev in g.terms:
                out[k] = (s, lam[k] * T, float(np.sum(lam[k] * ev / eig)))
        if self.layout.u:
            u = self.layout.slice("u")
            G = self.sp.matrix(tau, rho)
            out.append((u, G, float(self.layout.u)))
            if self.has_rho:
                jac = rho * (1.0 - rho)
                out.append((u, jac * self.sp.dmatrix_drho(tau), jac * self.sp.trace_inv_drho(rho)))
        return out


def assemble_Q(pa: PenaltyAssembly, lam, spatial: SpatialSpec, tau, rho, layout: BlockLayout,
               zeta=DEFAULT_ZETA):
    Q = PriorPrecision(pa, layout, spatial, zeta).matrix(lam, tau, rho)
    start = 0
    for name in ("beta", "gamma", "theta1", "theta2", "u"):
        n = getattr(layout, name)
        if n:
            try:
                np.linalg.cholesky(Q[start:start + n, start:start + n])
            except np.linalg.LinAlgError:
                raise NumericalError(f"prior precision block {name!r} is not positive definite") from None
        start += n
    return Q


# --------------------------------------------------------------------------
# design

class Design:
    """Row-blocked design ``H`` with rows of area ``j`` equal to ``X[j] @ E[j]``.

    Parameters
    ----------
    X : (J, n, q) array
        Per-area covariate blocks.
    E : (J, q, p) array
        Per-area maps from coefficients to the columns of ``X[j]``.
    offset : (J, n) array
    y : (J, n) array
    """

    def __init__(self, X, E, offset=None, y=None):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.E = np.ascontiguousarray(E, dtype=float)
        J, n, q = self.X.shape
        if self.E.shape[:2] != (J, q):
            raise ShapeError("X and E disagree on areas or columns")
        self.offset = np.zeros((J, n)) if offset is None else np.asarray(offset, dtype=float).reshape(J, n)
        self.y = None if y is None else np.asarray(y, dtype=float).reshape(J, n)

    @property
    def shape(self):
        J, n, _ = self.X.shape
        return J * n, self.E.shape[2]

    @property
    def n_obs(self):
        return self.shape[0]

    @property
    def n_coef(self):
        return self.shape[1]

    def coef_blocks(self, xi):
        return self.E @ xi  # (J, q) or (J, q, k)

    def __matmul__(self, xi):
        xi = np.asarray(xi, dtype=float)
        c = self.E @ xi
        if xi.ndim == 1:
            return np.einsum("jnq,jq->jn", self.X, c).reshape(-1)
        return (self.X @ c).reshape(-1, xi.shape[1])

    def rmatvec(self, r):
        """``H' r``."""
        r = np.asarray(r, dtype=float).reshape(self.X.shape[:2])
        t = np.einsum("jnq,jn->jq", self.X, r)
        return np.einsum("jqp,jq->p", self.E, t)

    def gram(self, w):
        """``H' diag(w) H``."""
        w = np.asarray(w, dtype=float).reshape(self.X.shape[:2])
        K = np.matmul(self.X.transpose(0, 2, 1), self.X * w[:, :, None])
        KE = K @ self.E
        J, q, p = self.E.shape
        G = self.E.reshape(J * q, p).T @ KE.reshape(J * q, p)
        return 0.5 * (G + G.T)

    def leverages(self, S):
        """``diag(H S H')`` for a symmetric p x p matrix S."""
        ES = self.E @ S
        Sj = ES @ self.E.transpose(0, 2, 1)
        return np.einsum("jnq,jnq->jn", self.X @ Sj, self.X).reshape(-1)

    def toarray(self):
        J, n, _ = self.X.shape
        return (self.X @ self.E).reshape(J * n, -1)


def dense_design(H, offset=None, y=None):
    """Wrap an explicit (n x p) matrix in the :class:`Design` interface."""
    H = np.asarray(H, dtype=float)
    n, p = H.shape
    off = None if offset is None else np.asarray(offset, dtype=float)[None, :]
    yy = None if y is None else np.asarray(y, dtype=float)[None, :]
    return Design(H[None], np.eye(p)[None], off, yy)


# --------------------------------------------------------------------------
# putting it together

@dataclass
class ModelComponents:
    spec: ModelSpec
    cb: CrossBasis
    ib: InteractionBasis | None
    main_spec: object
    main_basis: np.ndarray  # (J, n_gamma)
    design: Design
    layout: BlockLayout
    penalty: PenaltyAssembly
    prior: PriorPrecision
    fixed_info: dict


def _fixed_effects(panel: TimeSeriesPanel, spec: ModelSpec):
    """Per (area, time) fixed-effect columns: intercept, covariates, factors, trend."""
    J, T = panel.counts.shape
    cols = [np.ones((J, T))]
    names = ["intercept"]
    info = {"factor_levels": {}, "trend": None}
    for c in spec.covariates:
        if c not in panel.covariates:
            raise ConsistencyError(f"covariate {c!r} missing from the panel")
        cols.append(np.asarray(panel.covariates[c], dtype=float))
        names.append(c)
    factors = {f: panel.factors[f] for f in spec.factors if f in panel.factors}
    missing = [f for f in spec.factors if f not in panel.factors]
    if missing:
        raise ConsistencyError(f"factor columns {missing} missing from the panel")
    if spec.day_of_week:
        if not panel.has_dates():
            raise ConsistencyError("day_of_week requires ISO date time stamps")
        factors["dow"] = np.broadcast_to(day_of_week(panel.times)[None, :], (J, T))
    for f, arr in factors.items():
        arr = np.asarray(arr).astype(str)
        levels = sorted(set(arr.ravel()))
        info["factor_levels"][f] = levels
        for lev in levels[1:]:
            cols.append((arr == lev).astype(float))
            names.append(f"{f}[{lev}]")
    if spec.trend_df:
        yf = year_fraction(panel.times)
        tspec = bspline_spec(float(yf.min()), float(yf.max()), spec.trend_df,
                             degree=min(3, spec.trend_df), intercept=False)
        B = eval_basis(tspec, yf)
        info["trend"] = {"lo": float(yf.min()), "hi": float(yf.max()), "df": spec.trend_df}
        for k in range(B.shape[1]):
            cols.append(np.broadcast_to(B[:, k][None, :], (J, T)))
            names.append(f"trend_{k}")
    return np.stack(cols, axis=-1), names, info


def assemble_design(panel: TimeSeriesPanel, cb: CrossBasis, ib: InteractionBasis | None,
                    spec: ModelSpec, main_basis=None):
    """Build the structured design for the rows with a complete lag history.

    Returns
    -------
    design : Design
        Supports ``design @ xi`` and ``design.toarray()`` (columns A, Z, W, V, M).
    layout : BlockLayout
    offset : ndarray
        Log population for the retained rows (flattened area-major).
    """
    J, T = panel.counts.shape
    if cb.history.n_areas != J or cb.history.n_times != T:
        raise ConsistencyError("cross-basis was built for a different panel shape")
    spec.spatial.check_areas(J)
    L = cb.max_lag
    n = T - L
    A, names, _ = _fixed_effects(panel, spec)
    A = A[:, L:, :]
    nA = A.shape[2]
    vxl = cb.W.shape[1]
    W = cb.W.reshape(J, T, vxl)[:, L:, :]
    if main_basis is None:
        main_basis = np.zeros((J, 0))
    ng = main_basis.shape[1]
    if spec.modifier is not Modifier.NONE and ib is None:
        raise ConsistencyError("modifier requested but no interaction basis supplied")
    C = ib.area_basis if ib is not None else np.zeros((J, 0))
    vz = C.shape[1]
    layout = BlockLayout(nA, ng, vxl, vxl * vz, J, tuple(names))
    p = layout.n_xi
    q = nA + 1 + vxl
    X = np.concatenate([A, np.ones((J, n, 1)), W], axis=2)
    E = np.zeros((J, q, p))
    eye_b = np.eye(nA)
    eye_w = np.eye(vxl)
    og, o1, o2, ou = (layout.offset(b) for b in ("gamma", "theta1", "theta2", "u"))
    for j in range(J):
        E[j, :nA, :nA] = eye_b
        E[j, nA, og:og + ng] = main_basis[j]
        E[j, nA, ou + j] = 1.0
        E[j, nA + 1:, o1:o1 + vxl] = eye_w
        if vz:
            E[j, nA + 1:, o2:o2 + vxl * vz] = np.kron(C[j][None, :], eye_w)
    offset = panel.log_offset[:, L:]
    design = Design(X, E, offset, panel.counts[:, L:])
    return design, layout, offset.reshape(-1)


def build_model(panel: TimeSeriesPanel, spec: ModelSpec) -> ModelComponents:
    """Bases, cross-basis, design and prior precision for ``panel`` under ``spec``."""
    J, T = panel.counts.shape
    spec.spatial.check_areas(J)
    if spec.spatial.kind is not SpatialKind.IID and spec.spatial.graph.n_areas != J:
        raise ConsistencyError("adjacency graph and panel disagree on the number of areas")
    history = build_history(panel.exposure, spec.max_lag)
    xspec = exposure_basis_spec(spec, panel.exposure)
    lspec = lag_basis_spec(spec)
    cb = build_crossbasis(history, xspec, lspec)
    ib = None
    main_spec = None
    main_basis = np.zeros((J, 0))
    if spec.uses_z:
        if panel.modifier is None:
            raise ConsistencyError("the model uses a modifier but the panel has none")
        z = panel.modifier
        if spec.modifier is not Modifier.NONE:
            ib = build_interaction(cb, modifier_basis_spec(spec, z, "interaction"), z)
        main_spec = modifier_basis_spec(spec, z, "main")
        if main_spec is not None:
            main_basis = eval_basis(main_spec, z)
    design, layout, _ = assemble_design(panel, cb, ib, spec, main_basis)
    _, _, info = _fixed_effects(panel, spec)
    pa = assemble_penalty(spec)
    prior = PriorPrecision(pa, layout, spec.spatial, spec.zeta)
    return ModelComponents(spec, cb, ib, main_spec, main_basis, design, layout, pa, prior, info)


def interaction_row_basis(spec: ModelSpec, comps: ModelComponents, z):
    """``c(z)`` for arbitrary modifier values, shape (len(z), v_z)."""
    if comps.ib is None:
        return np.zeros((np.size(z), 0))
    return eval_basis(comps.ib.modifier_spec, np.atleast_1d(z))


__all__ = [
    "Family", "Modifier", "MainEffect", "ModelSpec", "BlockLayout", "PenaltyGroup",
    "PenaltyAssembly", "PriorPrecision", "Design", "ModelComponents", "assemble_design",
    "assemble_penalty", "assemble_Q", "build_model", "dense_design", "exposure_basis_spec",
    "lag_basis_spec", "modifier_basis_spec", "BasisKind",
]
