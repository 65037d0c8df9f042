"""Exposure-lag cross-basis ``W`` and modifier interaction matrix ``V``.

Rows are ordered area-major: row ``j * T + t`` holds area ``j`` at time ``t``.
Coefficients of the cross-basis are ordered exposure-major / lag-minor
(``theta_11, ..., theta_1vl, ..., theta_vx vl``). Interaction coefficients
add the modifier index as the slowest-varying position.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, eval_basis
from .errors import ShapeError


@dataclass(frozen=True)
class ExposureHistory:
    """Lagged exposures; ``values[r, l]`` is the exposure ``l`` steps before row ``r``."""

    values: np.ndarray
    max_lag: int
    valid_mask: np.ndarray
    n_areas: int
    n_times: int

    @property
    def area_index(self):
        return np.repeat(np.arange(self.n_areas), self.n_times)

    @property
    def time_index(self):
        return np.tile(np.arange(self.n_times), self.n_areas)


def build_history(exposure, max_lag: int) -> ExposureHistory:
    """Stack per-area exposure series into a lag matrix.

    ``exposure`` is a 2-D array (areas x times) or a sequence of 1-D series of
    equal length. Rows without a full lag history are flagged invalid.
    """
    if isinstance(exposure, np.ndarray) and exposure.ndim == 2:
        series = exposure.astype(float)
    else:
        seqs = [np.asarray(s, dtype=float).reshape(-1) for s in exposure]
        lengths = {len(s) for s in seqs}
        if len(lengths) != 1:
            raise ShapeError(f"ragged exposure series (lengths {sorted(lengths)})")
        series = np.vstack(seqs)
    L = int(max_lag)
    if L < 0:
        raise ShapeError("max_lag must be non-negative")
    J, T = series.shape
    if T < L + 1:
        raise ShapeError(f"series length {T} shorter than max_lag + 1 = {L + 1}")
    vals = np.full((J, T, L + 1), np.nan)
    for lag in range(L + 1):
        vals[:, lag:, lag] = series[:, : T - lag]
    valid = np.zeros((J, T), dtype=bool)
    valid[:, L:] = True
    return ExposureHistory(vals.reshape(J * T, L + 1), L, valid.reshape(-1), J, T)


@dataclass(frozen=True)
class CrossBasis:
    W: np.ndarray
    exposure_spec: BasisSpec
    lag_spec: BasisSpec
    lag_basis: np.ndarray
    history: ExposureHistory

    @property
    def v_x(self):
        return self.exposure_spec.num_basis

    @property
    def v_l(self):
        return self.lag_spec.num_basis

    @property
    def max_lag(self):
        return self.history.max_lag

    @property
    def valid_mask(self):
        return self.history.valid_mask

    def lag_contrasts(self, x, x0, lags=None):
        """Contrast rows ``(b(x) - b(x0)) kron blag(l)``; shape (len(x), len(lags), v_x*v_l)."""
        lags = np.arange(self.max_lag + 1) if lags is None else np.asarray(lags, dtype=int)
        bx = eval_basis(self.exposure_spec, np.atleast_1d(x))
        b0 = eval_basis(self.exposure_spec, [x0])
        diff = bx - b0
        bl = self.lag_basis[lags]
        return np.einsum("xi,lk->xlik", diff, bl).reshape(diff.shape[0], len(lags), -1)

    def overall_contrasts(self, x, x0):
        bx = eval_basis(self.exposure_spec, np.atleast_1d(x))
        b0 = eval_basis(self.exposure_spec, [x0])
        lag_sum = self.lag_basis.sum(axis=0)
        return np.einsum("xi,k->xik", bx - b0, lag_sum).reshape(bx.shape[0], -1)


def build_crossbasis(history: ExposureHistory, exposure_spec: BasisSpec,
                     lag_spec: BasisSpec) -> CrossBasis:
    """Row ``r`` of W is ``sum_l b(x_{r,l}) kron blag(l)`` for valid rows, zero otherwise."""
    L = history.max_lag
    lag_basis = eval_basis(lag_spec, np.arange(L + 1))
    valid = history.valid_mask
    n, v_x, v_l = history.values.shape[0], exposure_spec.num_basis, lag_spec.num_basis
    W = np.zeros((n, v_x * v_l))
    if valid.any():
        vals = history.values[valid]
        bx = eval_basis(exposure_spec, vals.reshape(-1)).reshape(vals.shape[0], L + 1, v_x)
        W[valid] = np.einsum("nli,lk->nik", bx, lag_basis).reshape(vals.shape[0], -1)
    return CrossBasis(W, exposure_spec, lag_spec, lag_basis, history)


@dataclass(frozen=True)
class InteractionBasis:
    V: np.ndarray
    modifier_spec: BasisSpec
    modifier_values: np.ndarray
    area_basis: np.ndarray  # (J, v_z): c_r(z_j)

    @property
    def v_z(self):
        return self.modifier_spec.num_basis


def build_interaction(cb: CrossBasis, modifier_spec: BasisSpec, z) -> InteractionBasis:
    """Row ``(t, j)`` of V is ``(w_tj * c_1(z_j), ..., w_tj * c_vz(z_j))``."""
    z = np.asarray(z, dtype=float).reshape(-1)
    J = cb.history.n_areas
    if z.size != J:
        raise ShapeError(f"expected {J} modifier values, got {z.size}")
    C = eval_basis(modifier_spec, z)
    per_row = C[cb.history.area_index]
    n = cb.W.shape[0]
    V = (per_row[:, :, None] * cb.W[:, None, :]).reshape(n, -1)
    return InteractionBasis(V, modifier_spec, z, C)
