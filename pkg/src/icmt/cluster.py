"""Item clustering by correlation with the popularity embedding."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class ClusterAssignment:
    assign: np.ndarray
    centroids: np.ndarray
    K: int
    inertia: float
    n_iter: int = 0
    inertia_history: list[float] = field(default_factory=list)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assign == k)


def trivial_assignment(n_items: int, dim: int = 0) -> ClusterAssignment:
    return ClusterAssignment(np.zeros(n_items, dtype=np.int64), np.zeros((1, dim)), 1, 0.0)


def clustering_embedding(item_vecs, pop_vec) -> np.ndarray:
    """``(v_i * v') / (|v_i| |v'|)`` row-wise; degenerate rows map to zero.

    Accepts a single item vector or an ``(n, D)`` matrix.
    """
    item_vecs = np.asarray(item_vecs, dtype=np.float64)
    pop_vec = np.asarray(pop_vec, dtype=np.float64)
    single = item_vecs.ndim == 1
    x = np.atleast_2d(item_vecs)
    denom = np.linalg.norm(x, axis=1) * np.linalg.norm(pop_vec)
    out = np.zeros_like(x)
    ok = denom > 0
    if not ok.all():
        logger.warning("%d items have a zero-norm clustering input; using zero embeddings", int((~ok).sum()))
    out[ok] = x[ok] * pop_vec / denom[ok, None]
    return out[0] if single else out


def _sq_dists(x, centroids):
    d = (x * x).sum(1)[:, None] - 2.0 * x @ centroids.T + (centroids * centroids).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(x, K, rng):
    n = len(x)
    centers = [int(rng.integers(n))]
    d2 = ((x - x[centers[0]]) ** 2).sum(1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            # every point coincides with a chosen center; fall back to unused points
            unused = np.setdiff1d(np.arange(n), centers)
            nxt = int(unused[rng.integers(len(unused))])
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        centers.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(1))
    return x[centers].copy()


def _repair_empty(x, labels, centroids, d2):
    K = len(centroids)
    for k in range(K):
        if np.any(labels == k):
            continue
        counts = np.bincount(labels, minlength=K)
        own = d2[np.arange(len(x)), labels].copy()
        own[counts[labels] <= 1] = -1.0  # never empty another cluster
        j = int(np.argmax(own))
        labels[j] = k
        centroids[k] = x[j]
    return labels


def kmeans(x, K: int, seed=0, max_iter: int = 100, tol: float = 1e-6) -> ClusterAssignment:
    """k-means++ seeding followed by Lloyd iterations.

    Stops when the largest centroid shift drops below ``tol`` or assignments stop
    changing. Distance ties go to the lowest cluster id.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if K < 1:
        raise ValueError("K must be at least 1")
    if K > n:
        raise ValueError(f"cannot form {K} clusters from {n} points")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if K == 1:
        c = x.mean(0, keepdims=True)
        inertia = float(((x - c) ** 2).sum())
        return ClusterAssignment(np.zeros(n, dtype=np.int64), c, 1, inertia, 1, [inertia])

    centroids = _kmeanspp(x, K, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(x, centroids)
        new_labels = np.argmin(d2, axis=1)
        new_labels = _repair_empty(x, new_labels, centroids, d2)
        history.append(float(d2[np.arange(n), new_labels].sum()))
        new_centroids = np.stack([x[new_labels == k].mean(0) for k in range(K)])
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(1)).max()
        same = labels is not None and np.array_equal(labels, new_labels)
        labels, centroids = new_labels, new_centroids
        if shift < tol or same:
            break
    # final assignment against the final centroids
    d2 = _sq_dists(x, centroids)
    final = _repair_empty(x, np.argmin(d2, axis=1), centroids, d2)
    inertia = float(d2[np.arange(n), final].sum())
    history.append(inertia)
    return ClusterAssignment(final, centroids, K, inertia, it, history)
