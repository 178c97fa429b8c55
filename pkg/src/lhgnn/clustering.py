"""Fuzzy C-Means and hard k-means over node matrices.

Both backends share the deterministic strided initialization (centroid p
starts at node floor(p*N/P)), which makes single-iteration clustering
reproducible.  The fuzzy path produces graded memberships

    u_ip = 1 / sum_j (d(x_i, c_p) / d(x_i, c_j))^(2/(m-1))

and the weighted centroid update c_p = sum_i u_ip^m x_i / sum_i u_ip^m;
the hard path runs Lloyd iterations with one-hot assignments.  On top of
either, a higher-order set picks K centroid vectors per node: by largest
u_ip^m for the fuzzy backend, by smallest distance for the hard one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ParameterError


@dataclass
class ClusterState:
    """Centroids (P, C) and the membership matrix (N, P) that produced them."""

    centroids: np.ndarray
    memberships: np.ndarray
    fuzziness: float
    iterations: int


@dataclass
class HigherOrderSet:
    """Per-node centroid selection: indices (N, K) and vectors (N, K, C)."""

    indices: np.ndarray
    vectors: np.ndarray

    @property
    def top_k(self) -> int:
        return self.indices.shape[1]


def init_centroids(nodes: np.ndarray, num_clusters: int) -> np.ndarray:
    """Deterministic strided sample: centroid p = node floor(p*N/P)."""
    nodes = np.asarray(nodes)
    n = nodes.shape[0]
    if n < num_clusters:
        raise ParameterError(f"need at least {num_clusters} nodes, got {n}")
    if num_clusters < 1:
        raise ParameterError(f"num_clusters must be >= 1, got {num_clusters}")
    idx = (np.arange(num_clusters) * n) // num_clusters
    return nodes[idx].copy()


def _sq_distances(nodes: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        np.einsum("nc,nc->n", nodes, nodes)[:, None]
        + np.einsum("pc,pc->p", centroids, centroids)[None, :]
        - 2.0 * (nodes @ centroids.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def memberships(nodes: np.ndarray, centroids: np.ndarray, m: float = 2.0) -> np.ndarray:
    """Graded membership of every node in every centroid; rows sum to 1.

    A node at zero distance from some centroid gets a one-hot row at the
    lowest such centroid index (the formula is singular there).
    """
    if m <= 1.0:
        raise ParameterError(f"fuzziness m must be > 1, got {m}")
    nodes = np.asarray(nodes, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    d2 = _sq_distances(nodes, centroids)
    # u_ip = d_ip^(-1/(m-1)) / sum_j d_ij^(-1/(m-1)) on squared distances
    with np.errstate(divide="ignore"):
        inv = d2 ** (-1.0 / (m - 1.0))
    u = np.empty_like(inv)
    zero_rows = ~np.isfinite(inv).all(axis=1)
    ok = ~zero_rows
    u[ok] = inv[ok] / inv[ok].sum(axis=1, keepdims=True)
    if zero_rows.any():
        u[zero_rows] = 0.0
        hit = np.argmax(d2[zero_rows] == 0.0, axis=1)
        u[np.flatnonzero(zero_rows), hit] = 1.0
    return u


def update_centroids(
    nodes: np.ndarray,
    u: np.ndarray,
    m: float = 2.0,
    prev_centroids: np.ndarray | None = None,
) -> np.ndarray:
    """Membership-weighted centroid update c_p = sum u^m x / sum u^m.

    A cluster whose weight column sums to zero keeps its previous centroid
    (flagged with a warning) rather than dividing by zero.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    w = u**m
    total = w.sum(axis=0)
    dead = total == 0.0
    if dead.any():
        if prev_centroids is None:
            raise ParameterError(
                f"clusters {np.flatnonzero(dead).tolist()} have zero total membership "
                "and no previous centroids were given"
            )
        warnings.warn(
            f"keeping previous centroids for empty clusters {np.flatnonzero(dead).tolist()}",
            RuntimeWarning,
            stacklevel=2,
        )
        total = np.where(dead, 1.0, total)
    out = (w.T @ nodes) / total[:, None]
    if dead.any():
        out[dead] = np.asarray(prev_centroids, dtype=np.float64)[dead]
    return out


def top_centroids(weights: np.ndarray, centroids: np.ndarray, top_k: int) -> HigherOrderSet:
    """K centroids with the largest per-node weight; ties keep the lowest index."""
    p = centroids.shape[0]
    if not 1 <= top_k <= p:
        raise ParameterError(f"top_k must satisfy 1 <= K <= P (P={p}), got {top_k}")
    order = np.argsort(-weights, axis=1, kind="stable")[:, :top_k]
    return HigherOrderSet(indices=order, vectors=centroids[order])


def fuzzy_cmeans(
    nodes: np.ndarray,
    num_clusters: int,
    top_k: int,
    m: float = 2.0,
    iterations: int = 1,
) -> tuple[ClusterState, HigherOrderSet]:
    """Full fuzzy clustering pass plus per-node top-K centroid selection.

    Strided init, then ``iterations`` rounds of (memberships, centroid
    update), then one final membership pass against the updated centroids;
    the higher-order set ranks centroids by u_ip^m.
    """
    if iterations < 1:
        raise ParameterError(f"iterations must be >= 1, got {iterations}")
    nodes = np.asarray(nodes, dtype=np.float64)
    c = init_centroids(nodes, num_clusters)
    u = None
    for _ in range(iterations):
        u = memberships(nodes, c, m)
        c = update_centroids(nodes, u, m, prev_centroids=c)
    u = memberships(nodes, c, m)
    state = ClusterState(centroids=c, memberships=u, fuzziness=m, iterations=iterations)
    return state, top_centroids(u**m, c, top_k)


def kmeans(nodes: np.ndarray, num_clusters: int, iterations: int = 1) -> ClusterState:
    """Lloyd iterations with hard assignments and strided init.

    Memberships come back one-hot; an emptied cluster keeps its previous
    centroid.
    """
    if iterations < 1:
        raise ParameterError(f"iterations must be >= 1, got {iterations}")
    nodes = np.asarray(nodes, dtype=np.float64)
    c = init_centroids(nodes, num_clusters)
    n, p = nodes.shape[0], num_clusters
    assign = None
    for _ in range(iterations):
        d2 = _sq_distances(nodes, c)
        assign = d2.argmin(axis=1)
        for j in range(p):
            members = assign == j
            if members.any():
                c[j] = nodes[members].mean(axis=0)
    onehot = np.zeros((n, p), dtype=np.float64)
    onehot[np.arange(n), assign] = 1.0
    return ClusterState(centroids=c, memberships=onehot, fuzziness=1.0, iterations=iterations)


def nearest_centroids(nodes: np.ndarray, centroids: np.ndarray, top_k: int) -> HigherOrderSet:
    """K closest centroids per node (the higher-order set for hard clustering)."""
    d2 = _sq_distances(np.asarray(nodes, dtype=np.float64), np.asarray(centroids, dtype=np.float64))
    return top_centroids(-d2, centroids, top_k)


# ---------------------------------------------------------------------------
# estimator wrappers
# ---------------------------------------------------------------------------


class FuzzyCMeans(BaseEstimator, ClusterMixin, TransformerMixin):
    """Soft clustering estimator over row-vector samples.

    Attributes after ``fit``: ``cluster_centers_`` (P, C),
    ``memberships_`` (N, P), ``labels_`` (argmax membership).
    ``transform`` returns memberships of new samples against the fitted
    centers.
    """

    def __init__(self, n_clusters: int = 50, m: float = 2.0, n_iter: int = 1):
        self.n_clusters = n_clusters
        self.m = m
        self.n_iter = n_iter

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        state, _ = fuzzy_cmeans(X, self.n_clusters, top_k=1, m=self.m, iterations=self.n_iter)
        self.cluster_centers_ = state.centroids
        self.memberships_ = state.memberships
        self.labels_ = state.memberships.argmax(axis=1)
        return self

    def transform(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return memberships(X, self.cluster_centers_, self.m)

    def predict(self, X):
        return self.transform(X).argmax(axis=1)


class LloydKMeans(BaseEstimator, ClusterMixin):
    """Hard-assignment counterpart of :class:`FuzzyCMeans` (same init rule)."""

    def __init__(self, n_clusters: int = 50, n_iter: int = 1):
        self.n_clusters = n_clusters
        self.n_iter = n_iter

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        state = kmeans(X, self.n_clusters, iterations=self.n_iter)
        self.cluster_centers_ = state.centroids
        self.labels_ = state.memberships.argmax(axis=1)
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return _sq_distances(X, self.cluster_centers_).argmin(axis=1)
