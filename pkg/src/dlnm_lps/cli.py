"""Command-line entry point: ``dlnm-lps {fit,simulate,score,compare,report} --config cfg.json``.

Every run writes its artifacts into ``--out`` (default ``out/<command>``).
JSON artifacts carry a ``meta`` block and CSV artifacts a leading
``# config_hash=... seed=...`` comment line. Wall-clock times go to a separate
``timing.json`` so that all other artifacts are byte-identical across reruns
with the same config and seed.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import (ConsistencyError, DataError, DLNMError, DomainError, InnerConvergenceError, NumericalError,
                     ScoringError, ShapeError, SpecError)
from .fit import FittedModel, fit_dlnm
from .inference import RRQuery, attributable_fraction, exceedance_prob, log_rr, rrr
from .laplace import FitResult, Hyperparams
from .model import ModelSpec, build_model
from .panel import read_panel_csv, read_panel_header, to_percentiles, write_panel_csv, year_fraction
from .simgen import (X_GRID, GridEstimate, ScenarioSpec, draw_area_design, generate_panel,
                     grid_estimate, score, truth_grid)
from .spatial import SpatialSpec, lattice_graph, read_adjacency_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class ConfigError(SpecError):
    """Malformed or inconsistent run configuration."""


# --------------------------------------------------------------------------
# serialization

def fmt(v):
    """Float with 17 significant digits; integers and strings pass through."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _json_value(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return "%.17g" % float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_value(v, indent, level + 1)}"
                 for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + _json_value(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent=2):
    """Deterministic JSON with sorted keys and 17-digit floats (non-finite become null)."""
    return _json_value(obj, indent, 0) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def write_csv(path, header, rows, meta):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={meta['config_hash']} seed={meta['seed']}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, int, np.floating, np.integer)) else v for v in row])


def read_csv_rows(path):
    """Rows of a CSV written by :func:`write_csv`, skipping ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# config handling

def load_config(path):
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    cfg["_base"] = str(path.resolve().parent)
    return cfg


def _resolve(cfg, rel):
    p = Path(rel)
    if not p.is_absolute():
        p = Path(cfg.get("_base", ".")) / p
    if not p.exists():
        raise ConfigError(f"referenced file {rel} does not exist")
    return p


def _public(cfg):
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


_MODEL_KEYS = {"family", "modifier", "main_effect_z", "spatial", "v_x", "v_l", "v_z", "v_z2",
               "n_categories", "max_lag", "lag_shrink", "diff_order", "penalized", "exposure_basis",
               "lag_basis", "exposure_range", "modifier_range", "observed_information"}


def load_panel(cfg):
    """Read ``data.panel``; the modifier column is carried whenever the file has it."""
    data = cfg.get("data")
    if not isinstance(data, dict) or "panel" not in data:
        raise ConfigError("config needs data.panel")
    path = _resolve(cfg, data["panel"])
    zcol = data.get("modifier_column", "z")
    panel = read_panel_csv(path, modifier=zcol if zcol in read_panel_header(path) else None,
                           covariates=tuple(data.get("covariates", ())), factors=tuple(data.get("factors", ())),
                           population=data.get("population_column", "population"))
    if data.get("exposure_percentiles", False):
        panel.exposure = to_percentiles(panel.exposure)
    return panel


def load_graph(cfg, n_areas, area_ids=None):
    """Adjacency from ``data.adjacency``, else a rook lattice over the areas."""
    data = cfg.get("data", {})
    if data.get("adjacency"):
        ids = area_ids if area_ids is not None else tuple(str(j) for j in range(n_areas))
        return read_adjacency_csv(_resolve(cfg, data["adjacency"]), ids)
    return lattice_graph(n_areas)


def model_spec(model_cfg, data_cfg, panel, graph) -> ModelSpec:
    unknown = set(model_cfg) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown model keys {sorted(unknown)}")
    kw = {k: v for k, v in model_cfg.items() if k != "spatial"}
    for k in ("exposure_range", "modifier_range"):
        if kw.get(k) is not None:
            kw[k] = tuple(kw[k])
    kind = model_cfg.get("spatial", "iid")
    kw["covariates"] = tuple(data_cfg.get("covariates", ()))
    kw["factors"] = tuple(data_cfg.get("factors", ()))
    kw["day_of_week"] = bool(data_cfg.get("day_of_week", False))
    df_year = float(data_cfg.get("trend_df_per_year", 0))
    if df_year > 0:
        yf = year_fraction(panel.times)
        years = yf.max() - yf.min() + 1 / 365.25
        kw["trend_df"] = max(2, int(math.ceil(df_year * years)))
    if kw["day_of_week"] and not panel.has_dates():
        raise ConfigError("day_of_week needs ISO dates in the time column")
    try:
        kw["spatial"] = SpatialSpec(kind, graph if kind in ("icar", "leroux") else None)
        return ModelSpec(**kw)
    except DLNMError:
        raise
    except (TypeError, ValueError) as e:  # unknown enum values or field names
        raise ConfigError(f"invalid model config: {e}") from None


def _grid_cfg(spec, n_default):
    """Grid from a list or {"from", "to", "step"} / {"from", "to", "n"}."""
    if spec is None:
        return None
    if isinstance(spec, dict):
        if "step" in spec:
            return np.arange(spec["from"], spec["to"] + 0.5 * spec["step"], spec["step"])
        return np.linspace(spec["from"], spec["to"], int(spec.get("n", n_default)))
    return np.asarray(spec, dtype=float)


def _meta(cfg, seed, command):
    return {"config_hash": config_hash(_public(cfg)), "seed": int(seed), "command": command}


# --------------------------------------------------------------------------
# fit / report

def _fit_summary(fitted: FittedModel, meta):
    r = fitted.result
    return {"meta": meta, "hyperparameters": r.hyper.as_dict(), "DIC": r.dic, "p_D": r.p_d,
            "deviance": r.deviance, "log_marginal": r.log_marginal, "objective": r.objective,
            "converged": r.converged, "iterations": r.iterations, "message": r.message,
            "n_xi": int(r.xi_mode.size), "n_obs": int(fitted.components.design.n_obs),
            "family": fitted.spec.family.value, "modifier": fitted.spec.modifier.value,
            "main_effect_z": fitted.spec.main_effect_z.value}


def _inference_artifacts(fitted, panel, cfg, seed, out, meta):
    inf = cfg.get("inference", {})
    cb, mspec = fitted.cb, fitted.modifier_spec
    lo, hi = cb.exposure_spec.boundary
    x = _grid_cfg(inf.get("x"), 41)
    x = np.linspace(lo, hi, 41) if x is None else x
    x0 = float(inf.get("x0", np.median(panel.exposure)))
    z = _grid_cfg(inf.get("z"), 5)
    if z is None:
        z = np.quantile(panel.modifier, [0.1, 0.5, 0.9]) if panel.modifier is not None else np.zeros(1)
    n_draws = int(inf.get("n_draws", 2000))
    lags = inf.get("lags", "all")
    surf = log_rr(fitted.result, cb, mspec, RRQuery(x, x0, z, lags, n_draws, seed))
    rows = []
    for a, xv in enumerate(surf.x):
        for b, zv in enumerate(surf.z):
            for c, lag in enumerate(surf.lags):
                rows.append([float(xv), float(zv), "overall" if lag < 0 else int(lag),
                             surf.estimate[a, b, c], surf.lower[a, b, c], surf.upper[a, b, c],
                             surf.gauss_lower[a, b, c], surf.gauss_upper[a, b, c]])
    write_csv(out / "rr_grid.csv", ["x", "z", "lag", "estimate", "lo", "hi", "gauss_lo", "gauss_hi"],
              rows, meta)
    written = ["rr_grid.csv"]
    if "rrr" in inf:
        c = inf["rrr"]
        curve = rrr(fitted.result, cb, mspec, x, x0, c["z_hi"], c["z_lo"], n_draws, seed)
        write_csv(out / "rrr.csv", ["x", "rrr", "lo", "hi"],
                  zip(curve.x, curve.estimate, curve.lower, curve.upper), meta)
        written.append("rrr.csv")
    if "exceedance" in inf:
        c = inf["exceedance"]
        zx = _grid_cfg(c.get("z"), 21)
        zx = z if zx is None else zx
        g = exceedance_prob(fitted.result, cb, mspec, x, zx, x0, c.get("threshold", 1.0), n_draws, seed)
        rows = [[float(xv), float(zv), g.prob[a, b], int(g.degenerate[a, b])]
                for a, xv in enumerate(g.x) for b, zv in enumerate(g.z)]
        write_csv(out / "exceedance.csv", ["x", "z", "prob", "degenerate"], rows, meta)
        written.append("exceedance.csv")
    if "af" in inf:
        c = inf["af"]
        J, T = panel.counts.shape
        L = cb.max_lag
        mu = np.full((J, T), np.nan)
        mu[:, L:] = fitted.fitted_mean()
        cf = c.get("counterfactual_z")
        if isinstance(cf, (int, float)):
            cf = np.full(J, float(cf))
        elif cf == "median":
            if panel.modifier is None:
                raise ConfigError("counterfactual_z 'median' needs a modifier column")
            cf = np.full(J, float(np.median(panel.modifier)))
        tab = attributable_fraction(fitted.result, panel, cb, mspec, x0, np.nan_to_num(mu),
                                    c.get("period"), c.get("per_area", True), cf, n_draws, seed)
        write_json(out / "af.json", {"meta": meta, "rows": tab.to_json(), **tab.extra})
        written.append("af.json")
    return written


def _save_state(path, fitted: FittedModel, meta):
    r = fitted.result
    h = r.hyper
    np.savez(path, xi=r.xi_mode, sigma=r.sigma, lam=h.lam,
             tau=np.nan if h.tau is None else h.tau, rho=np.nan if h.rho is None else h.rho,
             phi=h.phi, dic=r.dic, p_d=r.p_d, converged=r.converged,
             config_hash=np.array(meta["config_hash"]), seed=meta["seed"])


def _load_state(path, fitted_components, spec):
    st = np.load(path)
    lay = fitted_components.layout
    if st["xi"].size != lay.n_xi:
        raise ConsistencyError("stored fit does not match the model built from the config")
    tau = float(st["tau"])
    rho = float(st["rho"])
    h = Hyperparams(st["lam"], None if np.isnan(tau) else tau, None if np.isnan(rho) else rho,
                    float(st["phi"]), lambda_names=fitted_components.penalty.lambda_names)
    res = FitResult(st["xi"], st["sigma"], h, float(st["dic"]), float(st["p_d"]), bool(st["converged"]),
                    {}, np.nan, np.nan, np.nan, np.nan, names=tuple(lay.names()), layout=lay,
                    family=spec.family)
    return res, str(st["config_hash"])


def _prepare(cfg):
    panel = load_panel(cfg)
    graph = load_graph(cfg, panel.n_areas, panel.area_ids)
    spec = model_spec(cfg.get("model", {}), cfg.get("data", {}), panel, graph)
    return panel, spec


def run_fit(cfg, seed, out: Path):
    panel, spec = _prepare(cfg)
    meta = _meta(cfg, seed, "fit")
    fitted = fit_dlnm(panel, spec, maxfun=int(cfg.get("maxfun", 200)))
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "fit.json", _fit_summary(fitted, meta))
    write_json(out / "timing.json", {"meta": meta, "wall_time": fitted.result.wall_time})
    r = fitted.result
    sd = np.sqrt(np.clip(np.diag(r.sigma), 0, None))
    write_csv(out / "xi.csv", ["name", "estimate", "sd"], zip(r.names, r.xi_mode, sd), meta)
    _save_state(out / "fit.npz", fitted, meta)
    _inference_artifacts(fitted, panel, cfg, seed, out, meta)
    if not r.converged:
        raise NumericalError(f"outer optimizer did not converge: {r.message}")
    return fitted


def run_report(cfg, seed, out: Path):
    """Regenerate inference artifacts from a stored ``fit.npz`` without refitting."""
    panel, spec = _prepare(cfg)
    meta = _meta(cfg, seed, "report")
    state = cfg.get("fit_state")
    if not state:
        raise ConfigError("report needs fit_state (path to fit.npz written by the fit command)")
    comps = build_model(panel, spec)
    res, _ = _load_state(_resolve(cfg, state), comps, spec)
    fitted = FittedModel(panel, spec, comps, res)
    out.mkdir(parents=True, exist_ok=True)
    files = _inference_artifacts(fitted, panel, cfg, seed, out, meta)
    write_json(out / "report.json", {"meta": meta, "artifacts": files})


def run_compare(cfg, seed, out: Path):
    """Fit every listed model on the shared panel and tabulate DIC differences."""
    models = cfg.get("models")
    if not isinstance(models, list) or not models:
        raise ConfigError("compare needs a non-empty 'models' list")
    panel = load_panel(cfg)
    graph = load_graph(cfg, panel.n_areas, panel.area_ids)
    meta = _meta(cfg, seed, "compare")
    rows, times = [], {}
    for m in models:
        name = m.get("name")
        if not name:
            raise ConfigError("every compare entry needs a name")
        spec = model_spec(m.get("model", {}), cfg.get("data", {}), panel, graph)
        row = {"name": name, "row": m.get("row", name), "column": m.get("column", name)}
        try:
            fitted = fit_dlnm(panel, spec, maxfun=int(cfg.get("maxfun", 200)))
            r = fitted.result
            row.update(DIC=r.dic, p_D=r.p_d, converged=r.converged, failed=not r.converged)
            times[name] = r.wall_time
        except (NumericalError, InnerConvergenceError) as e:
            row.update(DIC=None, p_D=None, converged=False, failed=True, error=str(e))
        rows.append(row)
    ok = [r["DIC"] for r in rows if not r["failed"]]
    best = min(ok) if ok else None
    for r in rows:
        r["delta_DIC"] = None if r["failed"] or best is None else r["DIC"] - best
    table = {}
    for r in rows:
        table.setdefault(r["row"], {})[r["column"]] = "failed" if r["failed"] else r["delta_DIC"]
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "compare.json", {"meta": meta, "models": rows, "table": table})
    write_csv(out / "compare.csv", ["name", "DIC", "delta_DIC", "p_D", "failed"],
              [[r["name"], "NA" if r["DIC"] is None else r["DIC"],
                "NA" if r["delta_DIC"] is None else r["delta_DIC"],
                "NA" if r["p_D"] is None else r["p_D"], int(r["failed"])] for r in rows], meta)
    write_json(out / "timing.json", {"meta": meta, "wall_time": times})
    return rows


# --------------------------------------------------------------------------
# simulate / score

def scenario_from_config(cfg, seed):
    sc = dict(cfg.get("scenario", {}))
    sc["seed"] = seed
    try:
        return ScenarioSpec(**sc)
    except DLNMError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid scenario config: {e}") from None


def _grid_rows(est: GridEstimate, area_ids, x):
    nl = est.lag_est.shape[2]
    for j, area in enumerate(area_ids):
        for a, xv in enumerate(x):
            for lag in range(nl):
                yield [area, float(xv), lag, est.lag_est[j, a, lag], est.lag_lo[j, a, lag], est.lag_hi[j, a, lag]]
            yield [area, float(xv), "overall", est.overall_est[j, a], est.overall_lo[j, a], est.overall_hi[j, a]]


def read_grid_csv(path, J, x, n_lag):
    """Inverse of the grid CSV writer; missing cells stay NaN (and fail scoring)."""
    rows = read_csv_rows(path)
    lag = np.full((3, J, x.size, n_lag), np.nan)
    ov = np.full((3, J, x.size), np.nan)
    areas = {}
    xi = {round(float(v), 9): a for a, v in enumerate(x)}
    for k, r in enumerate(rows, start=2):
        try:
            j = areas.setdefault(r["area"], len(areas))
            a = xi[round(float(r["x"]), 9)]
            vals = [float(r["estimate"]), float(r["lo"]), float(r["hi"])]
        except (KeyError, ValueError, TypeError):
            raise DataError(f"{path}:{k}: malformed grid row") from None
        if j >= J:
            raise DataError(f"{path}:{k}: more than {J} areas")
        if r["lag"] == "overall":
            ov[:, j, a] = vals
        else:
            lag[:, j, a, int(r["lag"])] = vals
    return GridEstimate(lag[0], lag[1], lag[2], ov[0], ov[1], ov[2])


_GRID_HEADER = ["area", "x", "lag", "estimate", "lo", "hi"]


def _variant_specs(cfg, graph, panel):
    variants = cfg.get("variants")
    if not isinstance(variants, dict) or not variants:
        raise ConfigError("simulate needs a non-empty 'variants' mapping of name -> model config")
    return {name: model_spec(m, {}, panel, graph) for name, m in variants.items()}


def _replicate(args):
    """Fit all variants on replicate ``r``; module-level so worker processes can run it."""
    scenario, cfg, r, base_seed = args
    graph = load_graph(cfg, scenario.J)
    design = draw_area_design(scenario, None, graph, np.random.default_rng(base_seed))
    sim = generate_panel(scenario, design=design, rng=np.random.default_rng(base_seed + 1 + r))
    specs = _variant_specs(cfg, graph, sim.panel)
    n_draws = int(cfg.get("n_draws", 2000))
    res = {}
    for name, spec in specs.items():
        t0 = time.perf_counter()
        try:
            fitted = fit_dlnm(sim.panel, spec, maxfun=int(cfg.get("maxfun", 200)))
            if not fitted.result.converged:
                raise NumericalError(fitted.result.message)
            res[name] = (grid_estimate(fitted, design.z, n_draws=n_draws, seed=base_seed + r),
                         time.perf_counter() - t0)
        except (NumericalError, InnerConvergenceError, DomainError):
            res[name] = (None, time.perf_counter() - t0)
    return r, sim.panel, res


def run_simulate(cfg, seed, out: Path, threads=1):
    scenario = scenario_from_config(cfg, seed)
    n_rep = int(cfg.get("n_rep", 2))
    meta = _meta(cfg, seed, "simulate")
    graph = load_graph(cfg, scenario.J)
    design = draw_area_design(scenario, None, graph, np.random.default_rng(seed))
    _variant_specs(cfg, graph, generate_panel(scenario, design=design,
                                              rng=np.random.default_rng(seed + 1)).panel)  # validate early
    truth = truth_grid(design.surface, design.z, max_lag=scenario.L_true)
    out.mkdir(parents=True, exist_ok=True)
    (out / "panels").mkdir(exist_ok=True)
    jobs = [(scenario, cfg, r, seed) for r in range(n_rep)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_replicate, jobs))
    else:
        results = [_replicate(j) for j in jobs]
    results.sort(key=lambda t: t[0])
    names = list(cfg["variants"])
    area_ids = [str(j) for j in range(scenario.J)]
    grids = {n: [] for n in names}
    fails = {n: 0 for n in names}
    times = {n: [] for n in names}
    for r, panel, res in results:
        write_panel_csv(panel, out / "panels" / f"replicate_{r:03d}.csv",
                        comment=f"config_hash={meta['config_hash']} seed={meta['seed']} replicate={r}")
        for n in names:
            g, dt = res[n]
            times[n].append(dt)
            if g is None:
                fails[n] += 1
                continue
            grids[n].append(g)
            write_csv(out / f"grid_{_slug(n)}_{r:03d}.csv", _GRID_HEADER,
                      _grid_rows(g, area_ids, X_GRID), meta)
    t = truth
    write_csv(out / "truth_grid.csv", _GRID_HEADER,
              _grid_rows(GridEstimate(t.lag, t.lag, t.lag, t.overall, t.overall, t.overall), area_ids, X_GRID),
              meta)
    scores = {}
    for n in names:
        row = score(grids[n], truth).as_table_row() if grids[n] else {
            "cov RR": None, "cov RR overall": None, "RMSE RR": None, "RMSE RR overall": None}
        row["failed"] = fails[n] / n_rep
        scores[n] = row
    z_map = None
    if scenario.modification.value == "complex_em":
        z_map = {"lo": design.surface.z_range[0], "hi": design.surface.z_range[1], "target": [0.0, 2 * math.pi]}
    write_json(out / "scores.json", {"meta": meta, "n_rep": n_rep, "scores": scores, "z_map": z_map,
                                     "beta0": scenario.beta0_value})
    write_json(out / "timing.json", {"meta": meta, "time": {n: float(np.mean(v)) for n, v in times.items()}})
    return scores


def _slug(name):
    return "".join(c if c.isalnum() else "_" for c in name)


def run_score(cfg, seed, out: Path):
    """Score externally produced grid CSVs against the scenario truth."""
    scenario = scenario_from_config(cfg, seed)
    est = cfg.get("estimates")
    if not isinstance(est, dict) or not est:
        raise ConfigError("score needs 'estimates': {name: [grid csv paths]}")
    meta = _meta(cfg, seed, "score")
    graph = load_graph(cfg, scenario.J)
    design = draw_area_design(scenario, None, graph, np.random.default_rng(seed))
    truth = truth_grid(design.surface, design.z, max_lag=scenario.L_true)
    scores = {}
    for name, paths in est.items():
        paths = [paths] if isinstance(paths, str) else list(paths)
        grids = [read_grid_csv(_resolve(cfg, p), scenario.J, X_GRID, scenario.L_true + 1) for p in paths]
        row = score(grids, truth).as_table_row()
        row["failed"] = 0.0
        scores[name] = row
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "scores.json", {"meta": meta, "n_rep": None, "scores": scores})
    return scores


# --------------------------------------------------------------------------
# entry point

COMMANDS = {"fit": run_fit, "simulate": run_simulate, "score": run_score, "compare": run_compare,
            "report": run_report}


def build_parser():
    p = argparse.ArgumentParser(prog="dlnm-lps", description="Penalized DLNMs with spatial effect modification.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=None, help="worker processes for simulate")
    p.add_argument("--out", default=None, help="output directory")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
        threads = int(args.threads if args.threads is not None else cfg.get("threads", 1))
        out = Path(args.out or cfg.get("out") or os.path.join("out", args.command))
        if args.command == "simulate":
            run_simulate(cfg, seed, out, threads)
        else:
            COMMANDS[args.command](cfg, seed, out)
    except SpecError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ConsistencyError, DomainError, ShapeError, ScoringError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, InnerConvergenceError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
