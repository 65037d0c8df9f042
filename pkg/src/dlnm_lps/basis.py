"""Univariate spline bases and difference penalties.

Four basis kinds are supported:

* ``bspline``  -- B-splines of arbitrary degree with replicated boundary knots.
* ``natural``  -- natural cubic splines (linear beyond the boundary knots).
* ``linear``   -- the identity map ``c(z) = z`` (one column).
* ``dummy``    -- treatment-coded indicators for categories ``1..F``.

All functions are pure and operate on numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.interpolate import BSpline

from .errors import DomainError, SpecError

DEFAULT_RIDGE = 1e-12
DEFAULT_ZETA = 1e-5

# relative slack when checking that points lie inside the knot span
_SPAN_TOL = 1e-10


class BasisKind(str, Enum):
    BSPLINE = "bspline"
    NATURAL = "natural"
    LINEAR = "linear"
    DUMMY = "dummy"


@dataclass(frozen=True)
class BasisSpec:
    """Description of a univariate basis.

    Parameters
    ----------
    kind : BasisKind
    degree : int
        Polynomial degree (B-splines only; natural splines are always cubic).
    knots : tuple of float
        Boundary and interior knots, ``(lo, k_1, ..., k_K, hi)``, strictly
        increasing. Empty for ``linear`` and ``dummy``.
    intercept : bool
        Whether the basis spans the constants. When False the first column
        of the full basis is dropped.
    n_categories : int, optional
        Number of categories ``F`` (``dummy`` only).
    """

    kind: BasisKind
    degree: int = 3
    knots: tuple = ()
    intercept: bool = True
    n_categories: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BasisKind(self.kind))
        object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
        self.validate()

    def validate(self):
        kind = self.kind
        if kind in (BasisKind.BSPLINE, BasisKind.NATURAL):
            k = np.asarray(self.knots)
            if k.size < 2:
                raise SpecError(f"{kind.value} basis needs at least two boundary knots")
            if not np.all(np.isfinite(k)) or np.any(np.diff(k) <= 0):
                raise SpecError("knots must be finite and strictly increasing")
            if kind is BasisKind.BSPLINE and self.degree < 0:
                raise SpecError("degree must be non-negative")
            if self.num_basis < 1:
                raise SpecError("basis has no columns")
        elif kind is BasisKind.DUMMY:
            if self.n_categories is None or self.n_categories < 2:
                raise SpecError("dummy basis needs n_categories >= 2")

    @property
    def boundary(self):
        return self.knots[0], self.knots[-1]

    @property
    def interior(self):
        return self.knots[1:-1]

    @property
    def num_basis(self):
        if self.kind is BasisKind.BSPLINE:
            v = len(self.interior) + self.degree + 1
        elif self.kind is BasisKind.NATURAL:
            v = len(self.interior) + 2
        elif self.kind is BasisKind.LINEAR:
            return 1
        else:
            return self.n_categories - 1
        return v if self.intercept else v - 1


def bspline_spec(lo, hi, num_basis, degree=3, intercept=True):
    """B-spline basis with ``num_basis`` columns and equally spaced knots on [lo, hi]."""
    if not hi > lo:
        raise SpecError(f"empty basis range [{lo}, {hi}]")
    n_full = num_basis + (0 if intercept else 1)
    n_interior = n_full - degree - 1
    if n_interior < 0:
        raise SpecError(
            f"num_basis={num_basis} too small for degree {degree} (intercept={intercept})"
        )
    knots = np.linspace(lo, hi, n_interior + 2)
    return BasisSpec(BasisKind.BSPLINE, degree=degree, knots=tuple(knots), intercept=intercept)


def natural_spec(lo, hi, interior, intercept=True):
    knots = (float(lo), *map(float, interior), float(hi))
    return BasisSpec(BasisKind.NATURAL, degree=3, knots=knots, intercept=intercept)


def linear_spec():
    return BasisSpec(BasisKind.LINEAR)


def dummy_spec(n_categories):
    return BasisSpec(BasisKind.DUMMY, n_categories=int(n_categories))


def _full_knots(spec, degree):
    lo, hi = spec.boundary
    return np.r_[[lo] * degree, spec.knots, [hi] * degree]


def _bspline_object(spec, degree=None):
    degree = spec.degree if degree is None else degree
    t = _full_knots(spec, degree)
    n = len(t) - degree - 1
    return BSpline(t, np.eye(n), degree, extrapolate=False)


def _check_span(spec, x):
    lo, hi = spec.boundary
    slack = _SPAN_TOL * (hi - lo)
    bad = (x < lo - slack) | (x > hi + slack) | ~np.isfinite(x)
    if np.any(bad):
        offending = x[bad][0]
        raise DomainError(
            f"value {offending!r} outside basis span [{lo}, {hi}]"
        )
    return np.clip(x, lo, hi)


def _natural_projection(spec):
    """Null-space map imposing zero curvature at both boundary knots."""
    full = _bspline_object(spec, 3)
    d2 = full.derivative(2)
    lo, hi = spec.boundary
    const = d2(np.array([lo, hi]))
    if not spec.intercept:
        const = const[:, 1:]
    q, _ = np.linalg.qr(const.T, mode="complete")
    return full, q[:, 2:]


def eval_basis(spec: BasisSpec, points) -> np.ndarray:
    """Evaluate ``spec`` at ``points``; returns an array of shape (len(points), v).

    B-spline bases raise :class:`DomainError` for points outside the knot span.
    Natural splines extrapolate linearly. Dummy bases take integer category
    codes ``1..F``; category 1 is the reference level.
    """
    x = np.asarray(points, dtype=float).reshape(-1)
    v = spec.num_basis
    if x.size == 0:
        return np.zeros((0, v))
    kind = spec.kind

    if kind is BasisKind.LINEAR:
        if not np.all(np.isfinite(x)):
            raise DomainError("linear basis requires finite values")
        return x[:, None].copy()

    if kind is BasisKind.DUMMY:
        codes = np.rint(x)
        F = spec.n_categories
        bad = (np.abs(codes - x) > 0) | (codes < 1) | (codes > F)
        if np.any(bad):
            raise DomainError(f"category {x[bad][0]!r} outside 1..{F}")
        return (codes[:, None] == np.arange(2, F + 1)[None, :]).astype(float)

    if kind is BasisKind.BSPLINE:
        x = _check_span(spec, x)
        B = _bspline_object(spec)(x)
        return B if spec.intercept else B[:, 1:]

    # natural cubic spline
    full, proj = _natural_projection(spec)
    lo, hi = spec.boundary
    if not np.all(np.isfinite(x)):
        raise DomainError("natural spline requires finite values")
    inside = np.clip(x, lo, hi)
    B = full(inside)
    below = x < lo
    above = x > hi
    if below.any() or above.any():
        slope = full.derivative(1)
        ends = np.array([lo, hi])
        val_end = full(ends)
        der_end = slope(ends)
        B[below] = val_end[0] + (x[below] - lo)[:, None] * der_end[0]
        B[above] = val_end[1] + (x[above] - hi)[:, None] * der_end[1]
    if not spec.intercept:
        B = B[:, 1:]
    return B @ proj


def difference_matrix(v: int, m: int) -> np.ndarray:
    """m-th order forward difference operator of shape (v - m, v)."""
    if m < 1 or v <= m:
        raise SpecError(f"difference matrix needs v > m >= 1 (got v={v}, m={m})")
    return np.diff(np.eye(v), n=m, axis=0)


@dataclass(frozen=True)
class PenaltyBlock:
    """``matrix = R'R + ridge * I`` where ``R`` is the difference (or weight) operator."""

    matrix: np.ndarray
    order: int
    ridge: float
    operator: np.ndarray | None = None

    @property
    def size(self):
        return self.matrix.shape[0]

    def quadratic_form(self, theta):
        """``theta' matrix theta`` evaluated as ``|R theta|^2 + ridge |theta|^2`` (no cancellation)."""
        theta = np.asarray(theta, dtype=float)
        if self.operator is None:
            return float(theta @ self.matrix @ theta)
        r = self.operator @ theta
        return float(r @ r + self.ridge * theta @ theta)


def penalty_block(v: int, m: int = 2, ridge: float = DEFAULT_RIDGE) -> PenaltyBlock:
    """``D'D + ridge * I`` for the m-th order difference matrix D."""
    if not ridge > 0:
        raise SpecError("ridge must be positive")
    D = difference_matrix(v, m)
    S = D.T @ D + ridge * np.eye(v)
    return PenaltyBlock(0.5 * (S + S.T), m, ridge, D)


def lag_shrink_block(v_l: int, ridge: float = DEFAULT_RIDGE) -> PenaltyBlock:
    """Diagonal penalty with weights k**2, k = 0..v_l-1, pulling late lags to zero."""
    if v_l < 1:
        raise SpecError("v_l must be >= 1")
    if not ridge > 0:
        raise SpecError("ridge must be positive")
    k = np.arange(v_l, dtype=float)
    return PenaltyBlock(np.diag(k**2 + ridge), 0, ridge, np.diag(k))


def lag_knots_log(max_lag, n_interior):
    """Interior lag knots equally spaced on the log(1 + lag) scale."""
    grid = np.linspace(0.0, np.log1p(max_lag), n_interior + 2)[1:-1]
    return tuple(np.expm1(grid))
