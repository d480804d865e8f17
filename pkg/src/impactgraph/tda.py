"""Per-node topological descriptors for the TDA-augmented MLP.

Each sample gets four non-negative numbers: mean and max distance to its
k nearest neighbours, an inverse-density proxy (volume of the ball whose
radius is the mean kNN distance, per neighbour), and its 0-dimensional
persistence death time under the Vietoris-Rips filtration, computed
exactly by single linkage over the Euclidean minimum spanning tree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import RowMismatch, TooFewNodes
from .graph import cross_distances, knn_indices, pairwise_distances

DESCRIPTOR_NAMES = ("tda_mean_knn_dist", "tda_max_knn_dist", "tda_inv_density", "tda_death_time")


@dataclass(frozen=True)
class Merge:
    """One single-linkage merge: the edge ``(i, j)`` of ``length`` and who died."""

    i: int
    j: int
    length: float
    dying_root: int


def single_linkage(X: np.ndarray) -> tuple[np.ndarray, list[Merge]]:
    """Death time of every node and the merge sequence (Kruskal, elder rule).

    When two components merge, the smaller one dies (equal sizes: the one
    whose minimum node index is higher). Its members without a death time
    receive the merge length. Nodes of the final component receive the
    longest merge length as a finite cap.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise TooFewNodes(f"need at least 2 points, got {n}")
    D = pairwise_distances(X)
    iu, ju = np.triu_indices(n, k=1)
    lengths = D[iu, ju]
    order = np.lexsort((ju, iu, lengths))

    parent = np.arange(n)
    members = {i: [i] for i in range(n)}
    death = np.full(n, np.nan)
    merges: list[Merge] = []

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for e in order:
        a, b = int(iu[e]), int(ju[e])
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        # Roots are kept at the component's minimum index.
        size_a, size_b = len(members[ra]), len(members[rb])
        young = ra if size_a < size_b or (size_a == size_b and ra > rb) else rb
        length = float(lengths[e])
        for node in members[young]:
            if np.isnan(death[node]):
                death[node] = length
        merges.append(Merge(a, b, length, young))
        keep, drop = min(ra, rb), max(ra, rb)
        parent[drop] = keep
        members[keep] = members[keep] + members.pop(drop)
        if len(merges) == n - 1:
            break
    cap = max(m.length for m in merges)
    death[np.isnan(death)] = cap
    return death, merges


def mst_death_times(X: np.ndarray) -> np.ndarray:
    return single_linkage(X)[0]


def _inverse_density(mean_dist: np.ndarray, k: int) -> np.ndarray:
    return (4.0 / 3.0) * np.pi * mean_dist**3 / k


def node_descriptors(X: np.ndarray, k: int = 8) -> np.ndarray:
    """Raw (un-normalised) N x 4 descriptor matrix."""
    X = np.asarray(X, dtype=np.float64)
    _, dist = knn_indices(X, k)
    mean_d = dist.mean(axis=1)
    return np.column_stack([mean_d, dist.max(axis=1), _inverse_density(mean_d, k), mst_death_times(X)])


def query_descriptors(X_nodes: np.ndarray, X_query: np.ndarray, k: int = 8, node_desc: np.ndarray | None = None) -> np.ndarray:
    """Descriptors of new points relative to a stored cloud.

    A new point's kNN distances are taken to the stored nodes, and its death
    time is its nearest-neighbour distance (a singleton is always the younger
    component at its first merge). A query that coincides with a stored node
    takes that node's descriptors.
    """
    D = cross_distances(X_query, X_nodes)
    k = min(k, X_nodes.shape[0])
    dist = np.sort(D, axis=1)[:, :k]
    mean_d = dist.mean(axis=1)
    out = np.column_stack([mean_d, dist.max(axis=1), _inverse_density(mean_d, k), dist[:, 0]])
    if node_desc is not None:
        hit = dist[:, 0] == 0.0
        out[hit] = node_desc[np.argmin(D[hit], axis=1)]
    return out


def augment_features(X: np.ndarray, descriptors: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if X.shape[0] != descriptors.shape[0]:
        raise RowMismatch(f"feature rows {X.shape[0]} != descriptor rows {descriptors.shape[0]}")
    return np.hstack([X, descriptors])
