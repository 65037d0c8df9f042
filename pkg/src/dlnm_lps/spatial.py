"""Precision structures for area-level random effects (iid, ICAR, Leroux)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConsistencyError, DataError, SpecError

ICAR_JITTER = 1e-6


@dataclass(frozen=True)
class AdjacencyGraph:
    n_areas: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        clean = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise SpecError(f"self-loop on area {i}")
            if not (0 <= i < self.n_areas and 0 <= j < self.n_areas):
                raise SpecError(f"edge ({i}, {j}) outside 0..{self.n_areas - 1}")
            clean.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(clean))

    @property
    def neighbor_counts(self):
        counts = np.zeros(self.n_areas, dtype=int)
        for i, j in self.edges:
            counts[i] += 1
            counts[j] += 1
        return counts

    @property
    def n_components(self):
        return connected_components(self.adjacency(), directed=False)[0]

    def adjacency(self):
        if not self.edges:
            return coo_matrix((self.n_areas, self.n_areas)).tocsr()
        e = np.array(sorted(self.edges))
        rows = np.r_[e[:, 0], e[:, 1]]
        cols = np.r_[e[:, 1], e[:, 0]]
        return coo_matrix((np.ones(rows.size), (rows, cols)),
                          shape=(self.n_areas, self.n_areas)).tocsr()


def lattice_graph(n_areas, n_cols=None):
    """Rook-adjacency lattice, filled row by row (the last row may be partial)."""
    n_cols = n_cols or int(np.ceil(np.sqrt(n_areas)))
    edges = set()
    for a in range(n_areas):
        r, c = divmod(a, n_cols)
        if c + 1 < n_cols and a + 1 < n_areas:
            edges.add((a, a + 1))
        if a + n_cols < n_areas:
            edges.add((a, a + n_cols))
    return AdjacencyGraph(n_areas, frozenset(edges))


def read_adjacency_csv(path, area_ids):
    """Read an ``area_i,area_j`` edge list; ids are matched against ``area_ids``."""
    index = {str(a): k for k, a in enumerate(area_ids)}
    edges = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"area_i", "area_j"} <= set(reader.fieldnames):
            raise DataError(f"{path}: adjacency needs columns area_i,area_j")
        for lineno, row in enumerate(reader, start=2):
            a, b = row["area_i"].strip(), row["area_j"].strip()
            for x in (a, b):
                if x not in index:
                    raise ConsistencyError(f"{path}:{lineno}: unknown area id {x!r}")
            if a == b:
                raise DataError(f"{path}:{lineno}: self-loop on area {a!r}")
            edges.add((index[a], index[b]))
    return AdjacencyGraph(len(index), frozenset(edges))


class SpatialKind(str, Enum):
    IID = "iid"
    ICAR = "icar"
    LEROUX = "leroux"


@dataclass(frozen=True)
class SpatialSpec:
    kind: SpatialKind = SpatialKind.IID
    graph: AdjacencyGraph | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SpatialKind(self.kind))
        if self.kind is not SpatialKind.IID and self.graph is None:
            raise SpecError(f"{self.kind.value} prior requires an adjacency graph")

    @property
    def has_rho(self):
        return self.kind is SpatialKind.LEROUX

    def check_areas(self, n_areas):
        if self.graph is not None and self.graph.n_areas != n_areas:
            raise ConsistencyError(
                f"adjacency has {self.graph.n_areas} areas, panel has {n_areas}"
            )


def structure_matrix(graph: AdjacencyGraph) -> np.ndarray:
    """Neighbourhood structure R: neighbour counts on the diagonal, -1 for neighbours."""
    A = graph.adjacency().toarray()
    return np.diag(A.sum(axis=1)) - A


def precision(spec: SpatialSpec, tau: float, rho: float | None = None,
              n_areas: int | None = None, jitter: float = ICAR_JITTER) -> np.ndarray:
    """Precision matrix G of the random-effect vector u.

    ``n_areas`` is only needed for the iid prior when no graph is attached.
    """
    if not tau > 0:
        raise SpecError("tau must be positive")
    if spec.kind is SpatialKind.IID:
        if rho is not None:
            raise SpecError("rho is not a parameter of the iid prior")
        n = spec.graph.n_areas if spec.graph is not None else n_areas
        if n is None:
            raise SpecError("iid precision needs n_areas or a graph")
        return tau * np.eye(n)
    R = structure_matrix(spec.graph)
    n = R.shape[0]
    if spec.kind is SpatialKind.ICAR:
        return tau * (R + jitter * np.eye(n))
    if rho is None or not 0.0 <= rho < 1.0:
        raise SpecError("Leroux prior needs rho in [0, 1)")
    return tau * (rho * R + (1.0 - rho) * np.eye(n))


class SpatialPrecision:
    """Eigen-decomposed G for fast log-determinants and derivatives.

    For every kind, ``G = tau * (a(rho) R + b(rho) I)`` so the spectrum is
    ``tau * (a r_i + b)`` with ``r_i`` the eigenvalues of R.
    """

    def __init__(self, spec: SpatialSpec, n_areas: int, jitter=ICAR_JITTER):
        spec.check_areas(n_areas)
        self.spec = spec
        self.n = n_areas
        self.jitter = jitter
        if spec.kind is SpatialKind.IID:
            self.R = np.zeros((n_areas, n_areas))
            self.r = np.zeros(n_areas)
        else:
            self.R = structure_matrix(spec.graph)
            self.r = np.clip(np.linalg.eigvalsh(self.R), 0.0, None)

    def _ab(self, rho):
        kind = self.spec.kind
        if kind is SpatialKind.IID:
            return 0.0, 1.0
        if kind is SpatialKind.ICAR:
            return 1.0, self.jitter
        return rho, 1.0 - rho

    def matrix(self, tau, rho=None):
        a, b = self._ab(rho)
        return tau * (a * self.R + b * np.eye(self.n))

    def logdet(self, tau, rho=None):
        a, b = self._ab(rho)
        return self.n * np.log(tau) + np.sum(np.log(a * self.r + b))

    def dmatrix_drho(self, tau):
        return tau * (self.R - np.eye(self.n))

    def trace_inv_drho(self, rho):
        """tr(G^{-1} dG/drho) for the Leroux prior."""
        return np.sum((self.r - 1.0) / (rho * self.r + 1.0 - rho))


def sample_leroux(graph: AdjacencyGraph, rho, sigma2, rng):
    """Draw u ~ N(0, G^{-1}) with G = (rho R + (1 - rho) I) / sigma2."""
    G = precision(SpatialSpec(SpatialKind.LEROUX, graph), 1.0 / sigma2, rho)
    L = np.linalg.cholesky(G)
    eps = rng.standard_normal(graph.n_areas)
    return np.linalg.solve(L.T, eps)
