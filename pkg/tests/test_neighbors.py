"""Exact k-NN: oracle equivalence, tie handling, fast-path guards."""

import numpy as np
import pytest

from lhgnn.errors import ParameterError
from lhgnn.neighbors import knn


def knn_oracle(nodes: np.ndarray, k: int) -> np.ndarray:
    """O(N^2) direct-subtraction reference with the same tie rule."""
    n = nodes.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        d = np.sqrt(((nodes - nodes[i]) ** 2).sum(axis=1))
        d[i] = np.inf
        out[i] = np.argsort(d, kind="stable")[:k]
    return out


class TestKnn:
    def test_hand_case(self):
        nodes = np.array([[0.0], [1.0], [3.0]])
        result = knn(nodes, 2)
        np.testing.assert_array_equal(result.indices[0], [1, 2])

    def test_all_identical_ties(self):
        """Bit-identical rows tie exactly; lowest indices win."""
        nodes = np.tile(np.array([[2.0, -1.0, 0.5]]), (6, 1))
        result = knn(nodes, 3)
        np.testing.assert_array_equal(result.indices[0], [1, 2, 3])
        np.testing.assert_array_equal(result.indices[4], [0, 1, 2])
        np.testing.assert_allclose(result.distances, 0.0, atol=1e-6)

    def test_duplicate_pairs_tie_break(self):
        rng = np.random.default_rng(0)
        base = rng.normal(size=(8, 4))
        nodes = np.vstack([base, base])  # every row duplicated once
        result = knn(nodes, 1)
        # nearest neighbor of each row is its duplicate (distance 0)
        for i in range(8):
            assert result.indices[i, 0] == i + 8
            assert result.indices[i + 8, 0] == i

    def test_exhaustive_k(self):
        rng = np.random.default_rng(1)
        nodes = rng.normal(size=(7, 3))
        result = knn(nodes, 6)
        for i in range(7):
            assert i not in result.indices[i]
            assert sorted(result.indices[i]) == sorted(set(range(7)) - {i})
            assert np.all(np.diff(result.distances[i]) >= -1e-12)

    def test_oracle_random_instances(self):
        """Fast blocked path equals the O(N^2) oracle on 50 instances."""
        rng = np.random.default_rng(2)
        for trial in range(50):
            n = int(rng.integers(4, 130))
            c = int(rng.integers(1, 9))
            k = int(rng.integers(1, n))
            nodes = rng.normal(size=(n, c))
            np.testing.assert_array_equal(knn(nodes, k).indices, knn_oracle(nodes, k))

    def test_oracle_large_blocked(self):
        """N=512 with a small block size exercises the tiling."""
        rng = np.random.default_rng(3)
        nodes = rng.normal(size=(512, 6))
        result = knn(nodes, 9, block_size=100)
        np.testing.assert_array_equal(result.indices, knn_oracle(nodes, 9))

    def test_translation_invariance(self):
        rng = np.random.default_rng(4)
        nodes = rng.normal(size=(40, 5))
        shifted = nodes + np.full(5, 13.25)
        np.testing.assert_array_equal(knn(nodes, 7).indices, knn(shifted, 7).indices)

    def test_gram_identity_guard(self):
        """||a-b||^2 via norms and dot product matches direct subtraction."""
        rng = np.random.default_rng(5)
        a = rng.normal(size=(30, 8))
        sq = (a**2).sum(axis=1)
        gram = sq[:, None] + sq[None, :] - 2.0 * (a @ a.T)
        direct = ((a[:, None, :] - a[None, :, :]) ** 2).sum(axis=2)
        np.testing.assert_allclose(gram, direct, rtol=1e-4, atol=1e-8)

    def test_distances_match_oracle_values(self):
        rng = np.random.default_rng(6)
        nodes = rng.normal(size=(25, 4))
        result = knn(nodes, 5)
        for i in range(25):
            d = np.sqrt(((nodes - nodes[i]) ** 2).sum(axis=1))
            np.testing.assert_allclose(result.distances[i], np.sort(np.delete(d, i))[:5], atol=1e-5)

    def test_k_bounds(self):
        nodes = np.zeros((4, 2))
        with pytest.raises(ParameterError):
            knn(nodes, 4)
        with pytest.raises(ParameterError):
            knn(nodes, 0)

    def test_vectors_property(self):
        rng = np.random.default_rng(7)
        nodes = rng.normal(size=(10, 3))
        result = knn(nodes, 4)
        np.testing.assert_array_equal(result.vectors(), nodes[result.indices])
