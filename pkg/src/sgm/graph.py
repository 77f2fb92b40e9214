"""Weighted kNN graphs over point-cloud features, and their Laplacians.

Edges connect each point to its k exact nearest neighbors (kd-tree search);
the directed relations are symmetrized by union and deduplicated. Edge weight
falls off with distance so that nearby samples couple strongly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import ConfigError, ParseError
from .pointcloud import PointCloud

DEFAULT_EPS = 1e-12

WEIGHT_SCHEMES = ("inverse_distance", "inverse_square")


@dataclass(frozen=True)
class SparseGraph:
    """Undirected weighted graph: edge list with p < q, plus CSR adjacency."""

    n: int
    edges_p: np.ndarray  # (E,) int32
    edges_q: np.ndarray  # (E,) int32
    weights: np.ndarray  # (E,) float64, > 0
    adjacency: sp.csr_matrix

    def __post_init__(self):
        if (self.edges_p >= self.edges_q).any():
            raise ValueError("edges must be stored with p < q")
        if not np.isfinite(self.weights).all() or (self.weights <= 0).any():
            raise ValueError("edge weights must be finite and positive")

    @property
    def n_edges(self) -> int:
        return len(self.weights)

    def degrees(self) -> np.ndarray:
        """Unweighted node degrees."""
        deg = np.zeros(self.n, dtype=np.int64)
        np.add.at(deg, self.edges_p, 1)
        np.add.at(deg, self.edges_q, 1)
        return deg

    def weighted_degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()


@dataclass(frozen=True)
class Laplacian:
    graph: SparseGraph
    matrix: sp.csr_matrix  # D - W
    diag: np.ndarray

    @property
    def n(self) -> int:
        return self.graph.n


def _edges_from_pairs(n: int, p: np.ndarray, q: np.ndarray, w: np.ndarray) -> SparseGraph:
    lo = np.minimum(p, q)
    hi = np.maximum(p, q)
    keep = lo != hi
    lo, hi, w = lo[keep], hi[keep], w[keep]
    key = lo.astype(np.int64) * n + hi
    _, first = np.unique(key, return_index=True)
    lo, hi, w = lo[first], hi[first], w[first]
    order = np.lexsort((hi, lo))
    lo, hi, w = lo[order], hi[order], w[order]
    adj = sp.coo_matrix(
        (np.concatenate([w, w]), (np.concatenate([lo, hi]), np.concatenate([hi, lo]))),
        shape=(n, n),
    ).tocsr()
    return SparseGraph(n, lo.astype(np.int32), hi.astype(np.int32), w.astype(np.float64), adj)


def _weights_from_distances(d: np.ndarray, scheme: str, eps: float) -> np.ndarray:
    if scheme == "inverse_distance":
        return 1.0 / (d + eps)
    if scheme == "inverse_square":
        return 1.0 / (d * d + eps)
    raise ConfigError(f"unknown weight_scheme {scheme!r}; expected one of {WEIGHT_SCHEMES}")


def knn_edges(coords: np.ndarray, k: int, weight_scheme: str = "inverse_distance",
              eps: float = DEFAULT_EPS, workers: int = -1) -> SparseGraph:
    """kNN graph over raw coordinates. See build_knn for the cloud-level API."""
    n = len(coords)
    if k < 1:
        raise ConfigError("k must be >= 1")
    if n <= k:
        raise ConfigError(f"need more points than neighbors (N={n}, k={k})")
    tree = cKDTree(coords)
    dist, idx = tree.query(coords, k=k + 1, workers=workers)
    # Column 0 is the point itself unless there are exact duplicates; drop one
    # self-match per row wherever it appears.
    self_col = np.argmax(idx == np.arange(n)[:, None], axis=1)
    mask = np.ones_like(idx, dtype=bool)
    mask[np.arange(n), self_col] = False
    src = np.repeat(np.arange(n), k)
    dst = idx[mask]
    d = dist[mask]
    if eps == 0.0 and (d == 0.0).any():
        raise ConfigError("duplicate points give zero distance; eps=0 is not usable here")
    w = _weights_from_distances(d, weight_scheme, eps)
    return _edges_from_pairs(n, src, dst, w)


def build_knn(pc: PointCloud, features=None, k: int = 8,
              weight_scheme: str = "inverse_distance", eps: float = DEFAULT_EPS) -> SparseGraph:
    """Build the undirected kNN graph over selected cloud features.

    features defaults to the spatial dims plus parameter dims. Pass an index
    sequence to restrict (e.g. spatial only).
    """
    if features is None:
        features = (*pc.schema.spatial_dims, *pc.schema.param_dims)
    features = tuple(features)
    if not features:
        raise ConfigError("feature selection must be non-empty")
    coords = np.ascontiguousarray(pc.data[:, features])
    return knn_edges(coords, k, weight_scheme, eps)


def rebuild_with_outputs(pc: PointCloud, outputs: np.ndarray, features=None, k: int = 8,
                         weight_scheme: str = "inverse_distance", eps: float = DEFAULT_EPS) -> SparseGraph:
    """kNN over input features concatenated with standardized model outputs.

    Output columns are shifted/scaled to zero mean, unit variance; constant
    columns standardize to zero and cannot move any neighbor set.
    """
    outputs = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    if outputs.ndim == 2 and outputs.shape[0] == 1 and pc.n != 1:
        outputs = outputs.T
    if outputs.shape[0] != pc.n:
        raise ValueError(f"outputs have {outputs.shape[0]} rows, cloud has {pc.n}")
    bad = ~np.isfinite(outputs).all(axis=1)
    if bad.any():
        raise ValueError(f"non-finite output at row {int(np.flatnonzero(bad)[0])}")
    if features is None:
        features = (*pc.schema.spatial_dims, *pc.schema.param_dims)
    coords = pc.data[:, tuple(features)]
    mu = outputs.mean(axis=0)
    sd = outputs.std(axis=0)
    sd[sd == 0.0] = 1.0
    std_out = (outputs - mu) / sd
    return knn_edges(np.hstack([coords, std_out]), k, weight_scheme, eps)


def induced_subgraph(g: SparseGraph, nodes: np.ndarray) -> SparseGraph:
    """Subgraph on `nodes` with ids remapped to 0..len(nodes)-1."""
    nodes = np.asarray(nodes)
    remap = -np.ones(g.n, dtype=np.int64)
    remap[nodes] = np.arange(len(nodes))
    keep = (remap[g.edges_p] >= 0) & (remap[g.edges_q] >= 0)
    return _edges_from_pairs(
        len(nodes), remap[g.edges_p[keep]], remap[g.edges_q[keep]], g.weights[keep]
    )


def laplacian(g: SparseGraph) -> Laplacian:
    """L = D - W for the weighted adjacency W."""
    if g.n_edges == 0:
        raise ValueError("graph has no edges")
    diag = g.weighted_degrees()
    lap = sp.diags(diag) - g.adjacency
    return Laplacian(g, lap.tocsr(), diag)


def save_edges(g: SparseGraph, path) -> None:
    """Edge-list interchange format: one `p q w` line per edge, 0-indexed."""
    with open(path, "w") as fh:
        for p, q, w in zip(g.edges_p, g.edges_q, g.weights):
            fh.write(f"{p} {q} {float(w)!r}\n")


def load_edges(path, n: int | None = None) -> SparseGraph:
    ps, qs, ws = [], [], []
    with open(path) as fh:
        for i, line in enumerate(fh):
            stripped = line.strip()
            if not stripped:
                continue
            parts = stripped.split()
            if len(parts) != 3:
                raise ParseError(f"expected 'p q w', found {len(parts)} fields", line=i + 1)
            try:
                ps.append(int(parts[0]))
                qs.append(int(parts[1]))
                ws.append(float(parts[2]))
            except ValueError as exc:
                raise ParseError(str(exc), line=i + 1) from None
    if not ps:
        raise ParseError("no edges")
    p = np.asarray(ps)
    q = np.asarray(qs)
    if n is None:
        n = int(max(p.max(), q.max())) + 1
    return _edges_from_pairs(n, p, q, np.asarray(ws))
