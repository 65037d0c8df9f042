"""Synthetic panels with known exposure-lag-response surfaces and estimator scoring.

The log-rate of area ``j`` at time ``t`` is

    beta0 + beta1 z_j + sum_l f(x_{t-l,j}, l, z_j) + u_j + log(pop_j)

with ``f(x, l, z) = 0.1 sum_p delta_p(z) (x - 5)^(p-1) exp(-l / d(z))``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .crossbasis import build_history
from .errors import ScoringError, SpecError
from .inference import RRQuery, log_rr
from .panel import TimeSeriesPanel
from .spatial import AdjacencyGraph, lattice_graph, sample_leroux

DELTA = np.array([0.211881, 0.1406585, -0.0982663, 0.0153671, -0.0006265])
DELTA_MOD = np.array([0.2, 0.1, 0.5, 0.3, 0.15])
X_REF = 5.0
X_GRID = np.arange(0.0, 10.0 + 1e-9, 0.25)


class Modification(str, Enum):
    LINEAR = "linear_em"
    COMPLEX = "complex_em"


class AreaRegime(str, Enum):
    SMALL = "small"
    LARGE = "large"


# log-scale mean and sd of the lognormal population sizes
POPULATION = {AreaRegime.SMALL: (np.log(12_000.0), 1.8), AreaRegime.LARGE: (np.log(6_000_000.0), 0.9)}

# intercepts giving roughly 0.03 daily events per 1000 inhabitants
DEFAULT_BETA0 = {Modification.LINEAR: -10.5, Modification.COMPLEX: -8.0}


@dataclass(frozen=True)
class ScenarioSpec:
    modification: Modification = Modification.LINEAR
    area_regime: AreaRegime = AreaRegime.SMALL
    J: int = 73
    T: int = 1220
    L_true: int = 8
    family: str = "poisson"
    phi: float = 5.0
    beta0: float | None = None
    beta1: float = -1.0
    rho: float = 0.95
    sigma2: float = 0.2
    z_sd: float = 0.4
    effect_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "modification", Modification(self.modification))
        object.__setattr__(self, "area_regime", AreaRegime(self.area_regime))
        if self.family not in ("poisson", "negbin"):
            raise SpecError("family must be 'poisson' or 'negbin'")
        if self.J < 1 or self.T < self.L_true + 1:
            raise SpecError("need J >= 1 and T > L_true")
        if not 0 <= self.rho < 1 or self.sigma2 < 0:
            raise SpecError("need rho in [0, 1) and sigma2 >= 0")

    @property
    def beta0_value(self):
        return DEFAULT_BETA0[self.modification] if self.beta0 is None else self.beta0


@dataclass(frozen=True)
class TrueSurface:
    """``f(x, l, z)``; ``z_range`` fixes the affine map of z onto [0, 2 pi] (complex case)."""

    modification: Modification = Modification.LINEAR
    z_range: tuple | None = None
    scale: float = 0.1

    def angle(self, z):
        lo, hi = self.z_range
        return 2 * np.pi * (np.asarray(z, dtype=float) - lo) / (hi - lo)

    def coefficients(self, z):
        """``delta_p(z)`` with shape z.shape + (5,), and ``d(z)``."""
        z = np.asarray(z, dtype=float)
        if Modification(self.modification) is Modification.LINEAR:
            dz = DELTA * (1 + DELTA_MOD * z[..., None])
            d = np.full(z.shape, 2.0)
        else:
            if self.z_range is None:
                raise SpecError("complex modification needs z_range")
            a = self.angle(z)
            dz = DELTA * (1 + DELTA_MOD * np.cos(a)[..., None])
            d = 2.0 * (1 + 0.1 * np.sin(a))
        return dz, d

    def __call__(self, x, l, z):
        x, l, z = np.broadcast_arrays(np.asarray(x, float), np.asarray(l, float), np.asarray(z, float))
        dz, d = self.coefficients(z)
        powers = (x - X_REF)[..., None] ** np.arange(5)
        return self.scale * np.sum(dz * powers, axis=-1) * np.exp(-l / d)

    def log_rr(self, x, l, z, x0=X_REF):
        return self(x, l, z) - self(x0, l, z)

    def overall(self, x, z, x0=X_REF, max_lag=8):
        lags = np.arange(max_lag + 1)
        x = np.asarray(x, dtype=float)[..., None]
        z = np.asarray(z, dtype=float)[..., None]
        return np.sum(self.log_rr(x, lags, z, x0), axis=-1)


def true_log_rr(surface: TrueSurface, x, l, z):
    """Value of the generating surface itself (not contrasted with the reference)."""
    return surface(x, l, z)


def synthetic_exposure(J, T, rng, season_period=365.0, ar=0.8, lo=0.0, hi=10.0):
    """Seasonal sinusoid plus shared and area-level AR(1) noise, rescaled to [lo, hi]."""
    t = np.arange(T)
    season = np.sin(2 * np.pi * t / season_period)

    def ar1(shape):
        e = rng.standard_normal(shape)
        out = np.empty(shape)
        out[..., 0] = e[..., 0] / np.sqrt(1 - ar**2)
        for k in range(1, shape[-1]):
            out[..., k] = ar * out[..., k - 1] + e[..., k]
        return out * np.sqrt(1 - ar**2)

    shared = ar1((T,))
    local = ar1((J, T))
    level = 0.3 * rng.standard_normal((J, 1))
    x = season[None, :] + 0.6 * shared[None, :] + 0.4 * local + level
    x = (x - x.min()) / (x.max() - x.min())
    return lo + (hi - lo) * x


@dataclass
class AreaDesign:
    """Area-level quantities held fixed across replicates of one scenario."""

    z: np.ndarray
    population: np.ndarray
    exposure: np.ndarray
    graph: AdjacencyGraph
    surface: TrueSurface


def draw_area_design(spec: ScenarioSpec, exposure=None, graph=None, rng=None) -> AreaDesign:
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    graph = lattice_graph(spec.J) if graph is None else graph
    if graph.n_areas != spec.J:
        raise SpecError("adjacency graph size does not match J")
    z = rng.normal(0.0, spec.z_sd, spec.J)
    mlog, sdlog = POPULATION[spec.area_regime]
    pop = np.exp(rng.normal(mlog, sdlog, spec.J))
    if exposure is None:
        exposure = synthetic_exposure(spec.J, spec.T, rng)
    exposure = np.asarray(exposure, dtype=float)
    if exposure.shape[0] != spec.J or exposure.shape[1] < spec.T:
        raise SpecError(f"exposure must have {spec.J} rows and at least {spec.T} columns")
    z_range = (float(z.min()), float(z.max())) if spec.J > 1 else (float(z[0]) - 1, float(z[0]) + 1)
    surface = TrueSurface(spec.modification, z_range, spec.effect_scale)
    return AreaDesign(z, pop, exposure[:, : spec.T], graph, surface)


@dataclass
class SimulatedPanel:
    panel: TimeSeriesPanel
    truth: TrueSurface
    z: np.ndarray
    u: np.ndarray
    meta: dict = field(default_factory=dict)


def exposure_effect(surface: TrueSurface, exposure, z, max_lag):
    """``sum_l f(x_{t-l}, l, z_j)`` per (area, time), summing available lags only."""
    J, T = exposure.shape
    hist = build_history(exposure, max_lag).values.reshape(J, T, max_lag + 1)
    lags = np.arange(max_lag + 1)
    f = surface(np.nan_to_num(hist, nan=X_REF), lags[None, None, :], z[:, None, None])
    f[np.isnan(hist)] = 0.0
    return f.sum(axis=2)


def generate_panel(spec: ScenarioSpec, exposure_source=None, graph=None, design: AreaDesign | None = None,
                   rng=None) -> SimulatedPanel:
    """Draw one synthetic panel.

    ``design`` fixes z, population and exposure (as in a replicated study);
    otherwise they are drawn from ``rng`` as well.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    if design is None:
        design = draw_area_design(spec, exposure_source, graph, rng)
    z, pop, x = design.z, design.population, design.exposure
    if spec.sigma2 > 0:
        u = sample_leroux(design.graph, spec.rho, spec.sigma2, rng)
    else:
        u = np.zeros(spec.J)
    eff = exposure_effect(design.surface, x, z, spec.L_true)
    eta = spec.beta0_value + spec.beta1 * z[:, None] + eff + u[:, None] + np.log(pop)[:, None]
    mu = np.exp(eta)
    if spec.family == "poisson":
        y = rng.poisson(mu)
    else:
        y = rng.negative_binomial(spec.phi, spec.phi / (spec.phi + mu))
    panel = TimeSeriesPanel(y, x, population=pop, modifier=z)
    meta = {"z_map": {"lo": design.surface.z_range[0], "hi": design.surface.z_range[1],
                      "target": [0.0, 2 * np.pi]} if spec.modification is Modification.COMPLEX else None,
            "beta0": spec.beta0_value}
    return SimulatedPanel(panel, design.surface, z, u, meta)


# --------------------------------------------------------------------------
# scoring

@dataclass
class GridEstimate:
    """Per-area estimates on the (x, lag) grid: lag arrays (J, nx, nl), overall arrays (J, nx)."""

    lag_est: np.ndarray
    lag_lo: np.ndarray
    lag_hi: np.ndarray
    overall_est: np.ndarray
    overall_lo: np.ndarray
    overall_hi: np.ndarray


@dataclass
class GridTruth:
    lag: np.ndarray
    overall: np.ndarray


def truth_grid(surface: TrueSurface, z, x=X_GRID, x0=X_REF, max_lag=8) -> GridTruth:
    z = np.asarray(z, dtype=float)
    lags = np.arange(max_lag + 1)
    lag = surface.log_rr(x[None, :, None], lags[None, None, :], z[:, None, None], x0)
    return GridTruth(lag, lag.sum(axis=2))


@dataclass
class Scores:
    rmse_lag: float
    rmse_overall: float
    cov_lag: float
    cov_overall: float

    def as_table_row(self):
        return {"cov RR": self.cov_lag, "cov RR overall": self.cov_overall,
                "RMSE RR": self.rmse_lag, "RMSE RR overall": self.rmse_overall}


def score(fits, truth) -> Scores:
    """Surface-averaged RMSE and interval coverage over replicates.

    ``truth`` is one :class:`GridTruth` shared by all replicates or a list with
    one entry per replicate.
    """
    fits = list(fits)
    if not fits:
        raise ScoringError("no replicates to score")
    truths = truth if isinstance(truth, (list, tuple)) else [truth] * len(fits)
    if len(truths) != len(fits):
        raise ScoringError("one truth grid per replicate is required")
    se_lag, se_ov, hit_lag, hit_ov = [], [], [], []
    for f, t in zip(fits, truths):
        for name, arr, ref in (("lag", f.lag_est, t.lag), ("lag_lo", f.lag_lo, t.lag),
                               ("lag_hi", f.lag_hi, t.lag), ("overall", f.overall_est, t.overall),
                               ("overall_lo", f.overall_lo, t.overall),
                               ("overall_hi", f.overall_hi, t.overall)):
            if np.shape(arr) != np.shape(ref):
                raise ScoringError(f"{name} grid has shape {np.shape(arr)}, truth has {np.shape(ref)}")
            if not np.all(np.isfinite(arr)):
                raise ScoringError(f"{name} grid has missing cells")
        se_lag.append((f.lag_est - t.lag) ** 2)
        se_ov.append((f.overall_est - t.overall) ** 2)
        hit_lag.append((f.lag_lo <= t.lag) & (t.lag <= f.lag_hi))
        hit_ov.append((f.overall_lo <= t.overall) & (t.overall <= f.overall_hi))
    return Scores(
        rmse_lag=float(np.sqrt(np.mean(np.mean(se_lag, axis=0)))),
        rmse_overall=float(np.sqrt(np.mean(np.mean(se_ov, axis=0)))),
        cov_lag=float(np.mean(np.mean(hit_lag, axis=0))),
        cov_overall=float(np.mean(np.mean(hit_ov, axis=0))),
    )


def grid_estimate(fitted, z, x=X_GRID, x0=X_REF, n_draws=2000, seed=0) -> GridEstimate:
    """Evaluate a fitted model on the scoring grid for each area's modifier value."""
    q = RRQuery(x=x, x0=x0, z=z, lags="all", n_draws=n_draws, seed=seed)
    s = log_rr(fitted.result, fitted.cb, fitted.modifier_spec, q)
    # s arrays are (nx, nz, nl + 1); the last lag column is the overall effect
    est = np.transpose(s.estimate, (1, 0, 2))
    lo = np.transpose(s.lower, (1, 0, 2))
    hi = np.transpose(s.upper, (1, 0, 2))
    return GridEstimate(est[..., :-1], lo[..., :-1], hi[..., :-1], est[..., -1], lo[..., -1], hi[..., -1])


@dataclass
class StudyResult:
    scenario: ScenarioSpec
    scores: dict
    per_replicate: dict
    failures: dict
    times: dict


def run_study(scenario: ScenarioSpec, variants: dict, n_rep: int, base_seed=None, n_draws=2000,
              exposure=None, graph=None, fit_fn=None, progress=None) -> StudyResult:
    """Generate ``n_rep`` replicates and score every model variant.

    ``variants`` maps a label to a :class:`~dlnm_lps.model.ModelSpec` or to a
    callable that builds one from the scenario's adjacency graph.
    The area design is drawn once from ``base_seed``; replicate ``r`` uses the
    generator seed ``base_seed + 1 + r``.
    """
    from .fit import fit_dlnm
    fit_fn = fit_fn or fit_dlnm
    base_seed = scenario.seed if base_seed is None else base_seed
    graph = lattice_graph(scenario.J) if graph is None else graph
    design = draw_area_design(scenario, exposure, graph, np.random.default_rng(base_seed))
    truth = truth_grid(design.surface, design.z, max_lag=scenario.L_true)
    grids = {k: [] for k in variants}
    fails = {k: 0 for k in variants}
    times = {k: [] for k in variants}
    for r in range(n_rep):
        rng = np.random.default_rng(base_seed + 1 + r)
        sim = generate_panel(scenario, design=design, rng=rng)
        for name, spec in variants.items():
            if callable(spec):
                spec = spec(graph)
            t0 = time.perf_counter()
            try:
                fitted = fit_fn(sim.panel, spec)
                if not fitted.result.converged:
                    raise RuntimeError(fitted.result.message)
                grids[name].append(grid_estimate(fitted, design.z, n_draws=n_draws, seed=base_seed + r))
            except Exception:  # a failed replicate is recorded, not fatal
                fails[name] += 1
            times[name].append(time.perf_counter() - t0)
            if progress:
                progress(r, name)
    scores = {}
    for name in variants:
        row = score(grids[name], truth).as_table_row() if grids[name] else {
            "cov RR": None, "cov RR overall": None, "RMSE RR": None, "RMSE RR overall": None}
        row["time"] = float(np.mean(times[name])) if times[name] else None
        row["failed"] = fails[name] / n_rep
        scores[name] = row
    return StudyResult(scenario, scores, grids, fails, times)
