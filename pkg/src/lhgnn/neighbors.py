"""Exact k-nearest-neighbor retrieval over a dense node matrix.

Distances are squared Euclidean, computed blockwise through the Gram
identity |a-b|^2 = |a|^2 + |b|^2 - 2 a.b so a full N x N matrix never has
to be materialized at once.  Search is exact; ordering is ascending
distance with ties broken by ascending index, and a node is never its own
neighbor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError


@dataclass
class NeighborSet:
    """Per-node neighbor indices (N, k), sorted by distance then index."""

    indices: np.ndarray
    distances: np.ndarray
    nodes: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def vectors(self) -> np.ndarray:
        """Neighbor feature vectors, shape (N, k, C)."""
        return self.nodes[self.indices]


def knn(nodes: np.ndarray, k: int, block_size: int = 512) -> NeighborSet:
    """The k nearest distinct neighbors of every node, self excluded.

    Requires 1 <= k <= N-1.  Deterministic: exact ties (bit-identical
    rows give bit-identical distances) order by ascending index.
    """
    nodes = np.asarray(nodes)
    if nodes.ndim != 2:
        raise ParameterError(f"nodes must be (N, C), got shape {nodes.shape}")
    n = nodes.shape[0]
    if not 1 <= k <= n - 1:
        raise ParameterError(f"k must satisfy 1 <= k <= N-1 (N={n}), got k={k}")

    sq = np.einsum("nc,nc->n", nodes, nodes)
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k), dtype=nodes.dtype)
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (nodes[start:stop] @ nodes.T)
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(start, stop) - start, np.arange(start, stop)] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        indices[start:stop] = order
        distances[start:stop] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return NeighborSet(indices=indices, distances=distances, nodes=nodes)
