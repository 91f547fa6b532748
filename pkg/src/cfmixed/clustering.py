"""Serving-set selection and coherent-cluster partitioning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ClusterPlan:
    """Per-user serving sets and their split into coherent clusters.

    ``cluster[q, k]`` is the 1-based cluster of AP q for user k, 0 when q does
    not serve k. Cluster indices follow the delay bins, so empty clusters are
    possible; ``num_clusters[k]`` is L_k counting those.
    """

    serving: np.ndarray  # (Q, K) bool
    cluster: np.ndarray  # (Q, K) int
    num_clusters: np.ndarray  # (K,)
    serving_size: int

    def served_users(self, q: int) -> np.ndarray:
        return np.flatnonzero(self.serving[q])

    def serving_aps(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.serving[:, k])

    def clusters(self, k: int) -> list[np.ndarray]:
        """AP index arrays for clusters 1..L_k of user k (possibly empty)."""
        return [np.flatnonzero(self.cluster[:, k] == l)
                for l in range(1, self.num_clusters[k] + 1)]

    def nonempty_clusters(self, k: int) -> list[np.ndarray]:
        return [c for c in self.clusters(k) if c.size]


def _top_m(scores, m):
    """Boolean (Q, K) mask of the m best rows per column, ties -> lower index."""
    Q, K = scores.shape
    # stable sort on -score keeps index order among equal scores
    order = np.argsort(-scores, axis=0, kind="stable")[:m]
    mask = np.zeros((Q, K), dtype=bool)
    mask[order, np.arange(K)[None, :]] = True
    return mask


def nearest_aps(distances, m):
    return _top_m(-np.asarray(distances, dtype=float), m)


def partition_by_distance(distances, serving, D):
    """Bin each serving AP by its distance excess over the user's nearest one.

    AP q joins cluster l when ``(l-1) D <= d_qk - d_min < l D``.
    Returns ``(cluster, num_clusters)``. ``D = inf`` puts everything in one
    cluster.
    """
    distances = np.asarray(distances, dtype=float)
    Q, K = distances.shape
    cluster = np.zeros((Q, K), dtype=np.int64)
    L = np.zeros(K, dtype=np.int64)
    for k in range(K):
        aps = np.flatnonzero(serving[:, k])
        d = distances[aps, k]
        excess = d - d[np.argmin(d)]
        if np.isinf(D):
            cluster[aps, k] = 1
            L[k] = 1
            continue
        L[k] = int(np.floor((d.max() - d.min()) / D)) + 1
        edges = D * np.arange(L[k] + 1)
        # side="right": excess == edges[l] falls into bin l+1
        cluster[aps, k] = np.searchsorted(edges, excess, side="right")
    return cluster, L


def cluster_by_distance(distances, M0: int, D: float) -> ClusterPlan:
    """Serve each user from its M0 nearest APs and split them into delay bins."""
    distances = np.asarray(distances, dtype=float)
    if not 1 <= M0 <= distances.shape[0]:
        raise ValueError("M0 must lie in [1, Q]")
    serving = nearest_aps(distances, M0)
    cluster, L = partition_by_distance(distances, serving, D)
    return ClusterPlan(serving, cluster, L, M0)


def fixed_baseline(beta, M0: int) -> ClusterPlan:
    """User-centric baseline: the M0 strongest APs, one coherent cluster."""
    beta = np.asarray(beta, dtype=float)
    if not 1 <= M0 <= beta.shape[0]:
        raise ValueError("M0 must lie in [1, Q]")
    serving = _top_m(beta, M0)
    return single_cluster(serving, M0)


def single_cluster(serving, M0=None) -> ClusterPlan:
    serving = np.asarray(serving, dtype=bool)
    size = int(serving.sum(axis=0).max()) if M0 is None else M0
    return ClusterPlan(serving, serving.astype(np.int64),
                       np.ones(serving.shape[1], dtype=np.int64), size)
