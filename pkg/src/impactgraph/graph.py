"""Feature-space kNN graph, Gaussian edge weights, and Laplacian operators."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .exceptions import IsolatedNode, TooFewNodes, ValidationError, ZeroSigma


def pairwise_distances(X: np.ndarray) -> np.ndarray:
    """Dense Euclidean distance matrix."""
    X = np.asarray(X, dtype=np.float64)
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def cross_distances(Q: np.ndarray, X: np.ndarray) -> np.ndarray:
    diff = np.asarray(Q, dtype=np.float64)[:, None, :] - np.asarray(X, dtype=np.float64)[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _nearest(D: np.ndarray, k: int, exclude_self: bool) -> tuple[np.ndarray, np.ndarray]:
    n_rows, n_cols = D.shape
    cols = np.broadcast_to(np.arange(n_cols), D.shape)
    if exclude_self:
        D = D.copy()
        D[np.arange(n_rows), np.arange(n_rows)] = np.inf
    # lexsort keys run last-to-first: distance, then column index for ties
    order = np.lexsort((cols, D), axis=-1)[:, :k]
    return order, np.take_along_axis(D, order, axis=1)


def knn_indices(X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Directed k nearest neighbours of every row (self excluded).

    Ties in distance go to the smaller index. Returns ``(idx, dist)``, both
    of shape ``(n, k)`` and sorted by increasing distance.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("feature matrix contains non-finite values")
    n = X.shape[0]
    k = int(k)
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if n < k + 1:
        raise TooFewNodes(f"need at least k+1={k + 1} nodes, got {n}")
    return _nearest(pairwise_distances(X), k, exclude_self=True)


@dataclass(frozen=True)
class FeatureGraph:
    """Symmetrised kNN graph.

    Undirected edges are stored once with ``i < j`` in ``edges`` (shape
    ``(E, 2)``), aligned with ``distances`` and ``weights``. ``weights`` and
    ``sigma`` are ``None`` until :func:`gaussian_weights` is applied.
    """

    n_nodes: int
    k: int
    edges: np.ndarray
    distances: np.ndarray
    weights: np.ndarray | None = None
    sigma: float | None = None

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def neighbors(self) -> list[np.ndarray]:
        src, dst = self.directed()[:2]
        starts = np.searchsorted(src, np.arange(self.n_nodes + 1))
        return [dst[starts[i]:starts[i + 1]] for i in range(self.n_nodes)]

    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)

    def directed(self):
        """Both directions of every edge, sorted by (source, target).

        Returns ``(src, dst, dist, weight)``; ``weight`` is ``None`` if unset.
        """
        i, j = self.edges[:, 0], self.edges[:, 1]
        src = np.concatenate([i, j])
        dst = np.concatenate([j, i])
        dist = np.concatenate([self.distances, self.distances])
        order = np.lexsort((dst, src))
        w = None if self.weights is None else np.concatenate([self.weights, self.weights])[order]
        return src[order], dst[order], dist[order], w

    def adjacency(self) -> sp.csr_matrix:
        if self.weights is None:
            raise ValidationError("graph has no weights; call gaussian_weights first")
        src, dst, _, w = self.directed()
        return sp.csr_matrix((w, (src, dst)), shape=(self.n_nodes, self.n_nodes))

    def to_dict(self) -> dict:
        w = self.weights if self.weights is not None else [None] * self.n_edges
        return {
            "n": int(self.n_nodes),
            "k": int(self.k),
            "sigma": None if self.sigma is None else float(self.sigma),
            "edges": [
                [int(a), int(b), float(d), None if wt is None else float(wt)]
                for (a, b), d, wt in zip(self.edges, self.distances, w)
            ],
        }

    @classmethod
    def from_dict(cls, d) -> "FeatureGraph":
        rows = d["edges"]
        edges = np.array([[r[0], r[1]] for r in rows], dtype=np.int64).reshape(-1, 2)
        dist = np.array([r[2] for r in rows], dtype=np.float64)
        weights = None
        if rows and rows[0][3] is not None:
            weights = np.array([r[3] for r in rows], dtype=np.float64)
        return cls(int(d["n"]), int(d["k"]), edges, dist, weights, d.get("sigma"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FeatureGraph":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def knn_edges(X: np.ndarray, k: int = 8) -> FeatureGraph:
    """kNN graph symmetrised by union; weights unset."""
    idx, dist = knn_indices(X, k)
    n = idx.shape[0]
    rows = np.repeat(np.arange(n), k)
    cols = idx.ravel()
    d = dist.ravel()
    lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
    # Both directions of a mutual pair carry the same distance; keep one.
    key = lo * n + hi
    _, first = np.unique(key, return_index=True)
    edges = np.column_stack([lo[first], hi[first]])
    return FeatureGraph(n, int(k), edges, d[first].copy())


def median_sigma(graph: FeatureGraph) -> float:
    if graph.n_edges == 0:
        raise ValidationError("graph has no edges")
    sigma = float(np.median(graph.distances))
    if not sigma > 0:
        raise ZeroSigma("median edge distance is zero (duplicate-only data)")
    return sigma


def gaussian_kernel(d, sigma: float):
    return np.exp(-(np.asarray(d, dtype=np.float64) ** 2) / (2.0 * sigma * sigma))


def gaussian_weights(graph: FeatureGraph, sigma: float | None = None) -> FeatureGraph:
    if sigma is None:
        sigma = median_sigma(graph)
    if not sigma > 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    return replace(graph, weights=gaussian_kernel(graph.distances, sigma), sigma=float(sigma))


def build_graph(X: np.ndarray, k: int = 8) -> FeatureGraph:
    """kNN edges plus Gaussian weights at the median-edge-distance scale."""
    return gaussian_weights(knn_edges(X, k))


@dataclass(frozen=True)
class LaplacianOperator:
    """Symmetric normalised Laplacian ``I - D^-1/2 W D^-1/2`` (sparse)."""

    matrix: sp.csr_matrix
    lambda_max: float = 2.0

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def normalized_laplacian(graph: FeatureGraph, refine_lambda: bool = False) -> LaplacianOperator:
    W = graph.adjacency()
    deg = np.asarray(W.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        raise IsolatedNode(f"node {int(np.flatnonzero(deg <= 0)[0])} has no incident edges")
    s = 1.0 / np.sqrt(deg)
    src, dst, _, w = graph.directed()
    # w_ij * (s_i * s_j) is exactly symmetric; chained sparse products are not.
    norm_adj = sp.csr_matrix((w * (s[src] * s[dst]), (src, dst)), shape=W.shape)
    L = (sp.identity(graph.n_nodes, format="csr") - norm_adj).tocsr()
    lam = power_iteration_lambda_max(L) if refine_lambda else 2.0
    return LaplacianOperator(L, lam)


def power_iteration_lambda_max(L: sp.spmatrix, steps: int = 50, tol: float = 1e-6, seed: int = 0) -> float:
    """Largest eigenvalue estimate, clipped to the theoretical bound 2."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(L.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(steps):
        y = L @ x
        new = float(x @ y)
        norm = np.linalg.norm(y)
        if norm == 0:
            break
        x = y / norm
        if abs(new - lam) < tol * max(1.0, abs(new)):
            lam = new
            break
        lam = new
    # Rayleigh quotients underestimate; pad so the scaled spectrum stays in [-1, 1].
    return float(min(2.0, max(lam * 1.01, 1e-12)))


def chebyshev_scale(op: LaplacianOperator) -> sp.csr_matrix:
    """Rescaled Laplacian ``(2 / lambda_max) L - I`` with spectrum in [-1, 1]."""
    lam = op.lambda_max
    if not 0 < lam <= 2:
        raise ValidationError(f"lambda_max must lie in (0, 2], got {lam}")
    return ((2.0 / lam) * op.matrix - sp.identity(op.n, format="csr")).tocsr()


def mean_aggregator(graph: FeatureGraph) -> sp.csr_matrix:
    """Row-stochastic matrix of Gaussian-weighted neighbour means."""
    W = graph.adjacency()
    deg = np.asarray(W.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        raise IsolatedNode(f"node {int(np.flatnonzero(deg <= 0)[0])} has no incident edges")
    return (sp.diags(1.0 / deg) @ W).tocsr()


@dataclass(frozen=True)
class Attachment:
    """Directed links from query points into a stored graph.

    Query ``q`` (global index ``n_nodes + q``) receives messages from its
    ``k`` nearest stored nodes; stored nodes never see queries.
    """

    n_nodes: int
    n_queries: int
    neighbors: np.ndarray
    distances: np.ndarray
    weights: np.ndarray


def attach_queries(graph: FeatureGraph, X_nodes: np.ndarray, X_query: np.ndarray) -> Attachment:
    if graph.sigma is None:
        raise ValidationError("graph has no sigma; call gaussian_weights first")
    D = cross_distances(X_query, X_nodes)
    k = min(graph.k, graph.n_nodes)
    idx, dist = _nearest(D, k, exclude_self=False)
    return Attachment(graph.n_nodes, len(X_query), idx, dist, gaussian_kernel(dist, graph.sigma))


def extended_edges(graph: FeatureGraph, att: Attachment | None):
    """Directed ``(src, dst, weight)`` arrays over stored nodes plus queries.

    ``src`` is the receiving node; sorted by ``src``.
    """
    src, dst, _, w = graph.directed()
    if att is None or att.n_queries == 0:
        return src, dst, w
    q = graph.n_nodes + np.repeat(np.arange(att.n_queries), att.neighbors.shape[1])
    return (
        np.concatenate([src, q]),
        np.concatenate([dst, att.neighbors.ravel()]),
        np.concatenate([w, att.weights.ravel()]),
    )


def with_self_loops(src, dst, w, n: int):
    """Append an edge ``i -> i`` of weight ``exp(0) = 1`` per node, re-sorted by receiver."""
    nodes = np.arange(n)
    src = np.concatenate([src, nodes])
    dst = np.concatenate([dst, nodes])
    w = np.concatenate([w, np.ones(n)])
    order = np.lexsort((dst, src))
    return src[order], dst[order], w[order]


def extended_mean_aggregator(graph: FeatureGraph, att: Attachment | None) -> sp.csr_matrix:
    if att is None or att.n_queries == 0:
        return mean_aggregator(graph)
    n = graph.n_nodes + att.n_queries
    src, dst, w = extended_edges(graph, att)
    W = sp.csr_matrix((w, (src, dst)), shape=(n, n))
    deg = np.asarray(W.sum(axis=1)).ravel()
    return (sp.diags(1.0 / deg) @ W).tocsr()


def extended_chebyshev_operator(graph: FeatureGraph, op: LaplacianOperator, att: Attachment | None) -> sp.csr_matrix:
    """Rescaled Laplacian with query rows appended.

    Query rows use their own attachment degree and the stored nodes' degrees;
    stored rows are unchanged.
    """
    scaled = chebyshev_scale(op)
    if att is None or att.n_queries == 0:
        return scaled
    n, m = graph.n_nodes, att.n_queries
    deg_nodes = np.asarray(graph.adjacency().sum(axis=1)).ravel()
    deg_q = att.weights.sum(axis=1)
    norm_w = att.weights / np.sqrt(deg_q[:, None] * deg_nodes[att.neighbors])
    c = 2.0 / op.lambda_max
    rows = np.repeat(np.arange(m), att.neighbors.shape[1])
    off = sp.csr_matrix((-c * norm_w.ravel(), (rows, att.neighbors.ravel())), shape=(m, n))
    diag = sp.identity(m, format="csr") * (c - 1.0)
    top = sp.hstack([scaled, sp.csr_matrix((n, m))])
    bottom = sp.hstack([off, diag])
    return sp.vstack([top, bottom]).tocsr()
