"""Inverse stability rating: spectral comparison of an input-side graph and an
output-side graph.

The top generalized eigenpairs of (L_input, L_output) measure how sharply the
mapping that produced the outputs stretches input-space neighborhoods. Edge
scores embed each input edge through the scaled eigenvector basis; node scores
average the incident edge scores. High scores flag regions where the output
(here: per-sample loss) changes fastest per unit input distance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graph import Laplacian, SparseGraph, _edges_from_pairs, knn_edges, laplacian
from .resistance import components

DENSE_GUARD_N = 2000
DEFAULT_N_PAIRS = 3


@dataclass(frozen=True)
class SpectralBasis:
    eigvals: np.ndarray  # (r,) descending, >= 0
    eigvecs: np.ndarray  # (n, r), orthonormal in the solver's B-inner product
    vr: np.ndarray  # (n, r): columns eigvec_i * sqrt(eigval_i)


@dataclass(frozen=True)
class IsrScores:
    isr_max: float
    edge_scores: np.ndarray  # per input-graph edge
    node_scores: np.ndarray  # per node


@dataclass(frozen=True)
class SubsetScores:
    scores: np.ndarray  # in [0, 1], one per subset point
    degenerate: bool  # True when the output graph carries no signal


def _check_same_nodes(lx: Laplacian, ly: Laplacian):
    if lx.n != ly.n:
        raise ValueError(f"graphs disagree on node count ({lx.n} vs {ly.n})")
    isolated = np.flatnonzero(ly.diag == 0)
    if len(isolated):
        raise ValueError(f"output graph has isolated nodes: {isolated[:10].tolist()}")


def _generalized_topk(lx: Laplacian, ly: Laplacian, r: int):
    """Top-r eigenpairs of L_x u = lam * L_y u on the complement of constants.

    Dense path: deflate the shared constant nullspace by adding a rank-one
    term to L_y (exact; introduces a single artificial zero eigenvalue).
    Large-n path: Lanczos iteration against a diagonally shifted metric
    L_y + alpha*I, factorized directly so extreme edge weights (duplicate
    outputs saturate at 1/eps) stay solvable; alpha is small enough to move
    the retained eigenvalues by O(1e-8) relative.
    """
    n = lx.n
    r = min(r, n - 1)
    c = float(np.mean(ly.diag))
    if n <= DENSE_GUARD_N:
        a = lx.matrix.toarray()
        b = ly.matrix.toarray() + c / n
        vals, vecs = scipy.linalg.eigh(a, b)
        vals = vals[::-1][:r]
        vecs = vecs[:, ::-1][:, :r]
        return np.maximum(vals, 0.0), vecs

    # Shift each row in proportion to its own degree: edge weights can span
    # thirty orders of magnitude (duplicate outputs saturate at 1/eps), so an
    # absolute shift either distorts weak rows or leaves the factorization
    # singular. The relative perturbation of every retained pair is ~alpha.
    deg_shift = sp.diags(ly.diag)
    lu = None
    for alpha in (1e-12, 1e-9, 1e-6):
        shifted = (ly.matrix + alpha * deg_shift).tocsc()
        try:
            lu = spla.splu(shifted)
            break
        except RuntimeError:
            continue
    if lu is None:
        raise RuntimeError("output-graph metric could not be factorized")
    b_op = spla.LinearOperator((n, n), matvec=lambda x: shifted @ x, dtype=np.float64)
    b_inv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=np.float64)
    vals, vecs = spla.eigsh(lx.matrix, k=r, M=b_op, Minv=b_inv, which="LA")
    order = np.argsort(vals)[::-1]
    return np.maximum(vals[order], 0.0), vecs[:, order]


def isr_compute(lx: Laplacian, ly: Laplacian, r: int = DEFAULT_N_PAIRS):
    """Stability spectrum and per-edge/per-node scores.

    Requires both graphs on the same node set and each connected on it;
    restrict to a common component first if needed (see node_scores_subset).
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    _check_same_nodes(lx, ly)
    for name, lap_ in (("input", lx), ("output", ly)):
        n_comp, _ = components(lap_.graph)
        if n_comp != 1:
            raise ValueError(f"{name} graph is disconnected ({n_comp} components); "
                             "restrict both graphs to a common connected component")

    vals, vecs = _generalized_topk(lx, ly, r)
    vr = vecs * np.sqrt(vals)[None, :]
    basis = SpectralBasis(vals, vecs, vr)

    g = lx.graph
    diff = vr[g.edges_p] - vr[g.edges_q]
    edge_scores = np.einsum("ij,ij->i", diff, diff)

    node_sum = np.zeros(g.n)
    np.add.at(node_sum, g.edges_p, edge_scores)
    np.add.at(node_sum, g.edges_q, edge_scores)
    deg = g.degrees().astype(np.float64)
    node_scores = np.divide(node_sum, deg, out=np.zeros(g.n), where=deg > 0)

    return basis, IsrScores(float(vals[0]), edge_scores, node_scores)


def _loss_line_graph(losses: np.ndarray, k: int, weight_scheme: str) -> SparseGraph:
    """kNN graph over the 1-D loss values, closed with the consecutive-pair
    chain so it is connected by construction.

    Dense value blobs otherwise fill every neighbor slot internally and the
    value line fragments into islands; the chain edges are the 1-D manifold's
    natural backbone and use the same weight scheme.
    """
    from .graph import DEFAULT_EPS, _weights_from_distances

    gy = knn_edges(losses[:, None], k, weight_scheme)
    order = np.argsort(losses, kind="stable")
    p = order[:-1]
    q = order[1:]
    gaps = np.abs(losses[q] - losses[p])
    w = _weights_from_distances(gaps, weight_scheme, DEFAULT_EPS)
    return _edges_from_pairs(
        gy.n,
        np.concatenate([gy.edges_p, np.minimum(p, q)]),
        np.concatenate([gy.edges_q, np.maximum(p, q)]),
        np.concatenate([gy.weights, w]),
    )


def _restrict_to_common_component(gx: SparseGraph, gy: SparseGraph):
    """Iteratively keep the overlap of both graphs' largest components."""
    from .graph import induced_subgraph

    n = gx.n
    keep = np.arange(n)
    for _ in range(16):
        ncx, labx = components(gx)
        ncy, laby = components(gy)
        if ncx == 1 and ncy == 1:
            return gx, gy, keep
        big_x = np.argmax(np.bincount(labx))
        big_y = np.argmax(np.bincount(laby))
        mask = (labx == big_x) & (laby == big_y)
        if not mask.any():
            return None, None, np.array([], dtype=np.int64)
        sel = np.flatnonzero(mask)
        gx = induced_subgraph(gx, sel)
        gy = induced_subgraph(gy, sel)
        keep = keep[sel]
    return gx, gy, keep


def node_scores_subset(points: np.ndarray, losses: np.ndarray, k: int,
                       r: int = DEFAULT_N_PAIRS,
                       weight_scheme: str = "inverse_distance",
                       dump_path=None) -> SubsetScores:
    """Stability scores for a probe subset, from its features and scalar losses.

    Builds the input graph over the feature rows and the output graph over the
    1-D loss values (same k and weight scheme, plus the consecutive-value
    chain so the output graph is connected), restricts both to a common
    connected component, and min-max normalizes the node scores to [0, 1].
    Constant losses carry no signal and yield all-zero scores with the
    degenerate flag set. dump_path, when given, writes a node_id,isr_score
    CSV for debugging.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    losses = np.asarray(losses, dtype=np.float64).ravel()
    n = len(points)
    if len(losses) != n:
        raise ValueError("one loss per point required")
    if n < k + 2:
        raise ValueError(f"subset of {n} points is too small for k={k}")

    if np.ptp(losses) == 0.0:
        warnings.warn("constant losses: output graph is degenerate, scores are all zero")
        return _dumped(SubsetScores(np.zeros(n), True), dump_path)

    gx = knn_edges(points, k, weight_scheme)
    gy = _loss_line_graph(losses, k, weight_scheme)
    gx, gy, keep = _restrict_to_common_component(gx, gy)
    if gx is None or gx.n < 2 or gx.n_edges == 0 or gy.n_edges == 0:
        warnings.warn("no usable common component; scores are all zero")
        return _dumped(SubsetScores(np.zeros(n), True), dump_path)

    _, scores = isr_compute(laplacian(gx), laplacian(gy), r)
    raw = scores.node_scores
    span = raw.max() - raw.min()
    normalized = (raw - raw.min()) / span if span > 0 else np.zeros_like(raw)
    out = np.zeros(n)
    out[keep] = normalized
    return _dumped(SubsetScores(out, False), dump_path)


def _dumped(result: SubsetScores, dump_path):
    if dump_path is not None:
        with open(dump_path, "w") as fh:
            fh.write("node_id,isr_score\n")
            for i, s in enumerate(result.scores):
                fh.write(f"{i},{float(s)!r}\n")
    return result
