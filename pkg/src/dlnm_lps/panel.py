"""Count panels indexed by (area, time) and their CSV representation.

CSV schema (one row per area and time point)::

    time,area_id,count,exposure[,population][,<modifier>][,<covariates>...]

``time`` is an ISO date (``2021-06-01``) or an integer. Every area must be
observed at every time point.
"""
from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError


@dataclass
class TimeSeriesPanel:
    """Arrays are stored area-major: ``counts[j, t]``."""

    counts: np.ndarray
    exposure: np.ndarray
    area_ids: tuple = ()
    times: np.ndarray | None = None
    population: np.ndarray | None = None
    modifier: np.ndarray | None = None
    covariates: dict = field(default_factory=dict)
    factors: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        self.exposure = np.asarray(self.exposure, dtype=float)
        if self.counts.ndim != 2 or self.counts.shape != self.exposure.shape:
            raise ShapeError("counts and exposure must be 2-D arrays of equal shape (areas x times)")
        J, T = self.counts.shape
        if not self.area_ids:
            self.area_ids = tuple(str(j) for j in range(J))
        self.area_ids = tuple(str(a) for a in self.area_ids)
        if len(self.area_ids) != J:
            raise ShapeError("area_ids length does not match the number of areas")
        if self.times is None:
            self.times = np.arange(T)
        self.times = np.asarray(self.times)
        if self.times.shape != (T,):
            raise ShapeError("times must have one entry per time point")
        if np.any(self.counts < 0) or np.any(np.asarray(self.counts) != np.round(self.counts)):
            raise DataError("counts must be non-negative integers")
        self.counts = self.counts.astype(np.int64)
        if self.population is not None:
            pop = np.asarray(self.population, dtype=float)
            if pop.ndim == 1:
                pop = np.repeat(pop[:, None], T, axis=1)
            if pop.shape != (J, T) or np.any(pop <= 0):
                raise DataError("population must be positive, per area or per (area, time)")
            self.population = pop
        if self.modifier is not None:
            self.modifier = np.asarray(self.modifier, dtype=float).reshape(-1)
            if self.modifier.size != J:
                raise ShapeError("modifier must have one value per area")
        for name, arr in {**self.covariates, **self.factors}.items():
            if np.shape(arr) != (J, T):
                raise ShapeError(f"covariate {name!r} must have shape {(J, T)}")

    @property
    def n_areas(self):
        return self.counts.shape[0]

    @property
    def n_times(self):
        return self.counts.shape[1]

    @property
    def log_offset(self):
        if self.population is None:
            return np.zeros(self.counts.shape)
        return np.log(self.population)

    def has_dates(self):
        return np.issubdtype(self.times.dtype, np.datetime64)


def to_percentiles(exposure):
    """Per-area empirical CDF with midpoint ties, values in (0, 1)."""
    x = np.asarray(exposure, dtype=float)
    out = np.empty_like(x)
    for j in range(x.shape[0]):
        row = x[j]
        s = np.sort(row)
        below = np.searchsorted(s, row, side="left")
        upto = np.searchsorted(s, row, side="right")
        out[j] = (below + 0.5 * (upto - below)) / row.size
    return out


def day_of_week(times):
    """Monday = 0 ... Sunday = 6 for datetime64 day stamps."""
    days = times.astype("datetime64[D]").astype(np.int64)
    return (days + 3) % 7  # 1970-01-01 was a Thursday


def year_fraction(times):
    """Time in years; integer time stamps are read as day numbers."""
    if np.issubdtype(times.dtype, np.datetime64):
        days = times.astype("datetime64[D]").astype(np.int64)
        return days / 365.25
    return np.asarray(times, dtype=float) / 365.25


def _parse_time(raw, lineno, path):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return np.datetime64(_dt.date.fromisoformat(raw))
    except ValueError:
        raise DataError(f"{path}:{lineno}: cannot parse time {raw!r}") from None


def _parse_float(raw, col, lineno, path):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise DataError(f"{path}:{lineno}: column {col!r} is not numeric ({raw!r})") from None


def read_panel_csv(path, modifier=None, covariates=(), factors=(), population="population"):
    """Parse a panel CSV into a :class:`TimeSeriesPanel`.

    Parameters
    ----------
    modifier : str, optional
        Column holding the area-level effect modifier (must be constant per area).
    covariates, factors : sequence of str
        Extra numeric columns and categorical columns to carry along.
    population : str or None
        Column used as offset; silently skipped when absent from the file.
    """
    required = ["time", "area_id", "count", "exposure"]
    with open(path, newline="") as fh:
        lines = fh.readlines()
    n_comment = 0
    while n_comment < len(lines) and lines[n_comment].startswith("#"):
        n_comment += 1
    reader = csv.DictReader(lines[n_comment:])
    header = reader.fieldnames or []
    missing = [c for c in required + list(covariates) + list(factors) if c not in header]
    if modifier and modifier not in header:
        missing.append(modifier)
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    use_pop = population is not None and population in header
    known = set(required) | set(covariates) | set(factors) | {modifier, population}
    unknown = [c for c in header if c not in known]
    if unknown:
        raise DataError(f"{path}: unknown columns {unknown}; declare them as covariates or factors")
    records = []
    for lineno, row in enumerate(reader, start=2 + n_comment):
        t = _parse_time(row["time"], lineno, path)
        c = _parse_float(row["count"], "count", lineno, path)
        if c < 0 or c != int(c):
            raise DataError(f"{path}:{lineno}: count {row['count']!r} is not a non-negative integer")
        rec = {
            "time": t,
            "area": row["area_id"].strip(),
            "count": int(c),
            "exposure": _parse_float(row["exposure"], "exposure", lineno, path),
            "lineno": lineno,
        }
        if use_pop:
            rec["population"] = _parse_float(row[population], population, lineno, path)
        if modifier:
            rec["modifier"] = _parse_float(row[modifier], modifier, lineno, path)
        for cname in covariates:
            rec[cname] = _parse_float(row[cname], cname, lineno, path)
        for fname in factors:
            rec[fname] = row[fname].strip()
        records.append(rec)
    if not records:
        raise DataError(f"{path}: no data rows")

    areas = sorted({r["area"] for r in records}, key=_natural_key)
    if len({type(r["time"]) for r in records}) > 1:
        raise DataError(f"{path}: mixed integer and date time stamps")
    times = sorted({r["time"] for r in records})
    a_idx = {a: k for k, a in enumerate(areas)}
    t_idx = {t: k for k, t in enumerate(times)}
    J, T = len(areas), len(times)
    seen = np.zeros((J, T), dtype=bool)
    counts = np.zeros((J, T), dtype=np.int64)
    expo = np.zeros((J, T))
    pop = np.zeros((J, T)) if use_pop else None
    mod = np.full(J, np.nan) if modifier else None
    cov = {c: np.zeros((J, T)) for c in covariates}
    fac = {f: np.empty((J, T), dtype=object) for f in factors}
    for r in records:
        j, t = a_idx[r["area"]], t_idx[r["time"]]
        if seen[j, t]:
            raise DataError(f"{path}:{r['lineno']}: duplicate row for area {r['area']!r} at {r['time']}")
        seen[j, t] = True
        counts[j, t] = r["count"]
        expo[j, t] = r["exposure"]
        if use_pop:
            pop[j, t] = r["population"]
        if modifier:
            if not np.isnan(mod[j]) and mod[j] != r["modifier"]:
                raise DataError(f"{path}:{r['lineno']}: modifier varies within area {r['area']!r}")
            mod[j] = r["modifier"]
        for c in covariates:
            cov[c][j, t] = r[c]
        for f in factors:
            fac[f][j, t] = r[f]
    if not seen.all():
        j, t = np.argwhere(~seen)[0]
        raise DataError(f"{path}: area {areas[j]!r} has no row at time {times[t]}")
    return TimeSeriesPanel(counts, expo, tuple(areas), np.array(times), pop, mod, cov, fac)


def _natural_key(s):
    try:
        return (0, int(s), s)
    except ValueError:
        return (1, 0, s)


def read_panel_header(path):
    """Column names of a panel CSV (leading ``#`` comment lines skipped)."""
    with open(path, newline="") as fh:
        for line in fh:
            if not line.startswith("#"):
                return next(csv.reader([line]))
    return []


def write_panel_csv(panel: TimeSeriesPanel, path, modifier="z", comment=None):
    header = ["time", "area_id", "count", "exposure"]
    if panel.population is not None:
        header.append("population")
    if panel.modifier is not None:
        header.append(modifier)
    header += list(panel.covariates) + list(panel.factors)
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for j, area in enumerate(panel.area_ids):
            for t in range(panel.n_times):
                row = [str(panel.times[t]), area, int(panel.counts[j, t]), repr(float(panel.exposure[j, t]))]
                if panel.population is not None:
                    row.append(repr(float(panel.population[j, t])))
                if panel.modifier is not None:
                    row.append(repr(float(panel.modifier[j])))
                row += [repr(float(panel.covariates[c][j, t])) for c in panel.covariates]
                row += [panel.factors[f][j, t] for f in panel.factors]
                w.writerow(row)
