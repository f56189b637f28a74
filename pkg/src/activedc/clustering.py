"""K-Means over a feature pool and cluster -> class label mapping."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._parallel import map_chunks, ordered_sum
from .features import FeaturePool


@dataclass
class ClusterModel:
    centroids: np.ndarray
    assign: np.ndarray
    inertia: float
    inertia_trace: list[float] = field(default_factory=list)
    label_map: np.ndarray | None = None
    iters: int = 0

    @property
    def k(self) -> int:
        return len(self.centroids)

    def point_labels(self) -> np.ndarray:
        if self.label_map is None:
            raise ValueError("cluster labels not assigned yet")
        return self.label_map[self.assign]


def _rows(pool) -> np.ndarray:
    if isinstance(pool, FeaturePool):
        return pool.data.astype(np.float64, copy=False)
    return np.asarray(pool, dtype=np.float64)


def sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ centroids.T + (centroids * centroids).sum(1)[None, :]
    return np.maximum(d, 0.0)


def nearest_centroid(x: np.ndarray, centroids: np.ndarray):
    """Nearest centroid per row (ties -> smallest id) and squared distance."""

    def work(lo, hi):
        d = sq_distances(x[lo:hi], centroids)
        c = np.argmin(d, axis=1)
        return c, d[np.arange(hi - lo), c]

    parts = map_chunks(work, len(x))
    return (
        np.concatenate([p[0] for p in parts]).astype(np.int64),
        np.concatenate([p[1] for p in parts]),
    )


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = sq_distances(x, x[chosen]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            probs = closest / total
        else:
            # every point coincides with a center; fall back to unused rows
            probs = np.ones(n)
            probs[chosen] = 0.0
            probs /= probs.sum()
        nxt = int(rng.choice(n, p=probs))
        chosen.append(nxt)
        closest = np.minimum(closest, sq_distances(x, x[nxt : nxt + 1]).ravel())
    return x[chosen].copy()


def _centroid_sums(x, assign, k):
    def work(lo, hi):
        onehot = np.zeros((k, hi - lo))
        onehot[assign[lo:hi], np.arange(hi - lo)] = 1.0
        return onehot @ x[lo:hi]

    return ordered_sum(map_chunks(work, len(x)))


def _repair_empty(x, assign, dist, centroids, counts):
    for c in np.flatnonzero(counts == 0):
        donors = counts[assign] > 1
        cand = np.where(donors, dist, -1.0)
        far = int(np.argmax(cand))
        counts[assign[far]] -= 1
        assign[far] = c
        counts[c] = 1
        dist[far] = 0.0
        centroids[c] = x[far]


def kmeans(pool, k: int, seed: int = 0, max_iters: int = 100, n_init: int = 1) -> ClusterModel:
    """k-means++ seeded Lloyd iterations; with ``n_init`` > 1 the restart of
    lowest inertia is kept (earliest on ties)."""
    x = _rows(pool)
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"K={k} must be in [1, {n}]")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        model = _lloyd(x, k, rng, max_iters)
        if best is None or model.inertia < best.inertia:
            best = model
    return best


def _lloyd(x, k, rng, max_iters) -> ClusterModel:
    centroids = _kmeanspp(x, k, rng)
    assign, dist = nearest_centroid(x, centroids)
    trace = [float(dist.sum())]
    it = 0
    for it in range(1, max_iters + 1):
        counts = np.bincount(assign, minlength=k)
        if (counts == 0).any():
            _repair_empty(x, assign, dist, centroids, counts)
        sums = _centroid_sums(x, assign, k)
        centroids = sums / counts[:, None]
        new_assign, dist = nearest_centroid(x, centroids)
        trace.append(float(dist.sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    inertia = float(((x - centroids[assign]) ** 2).sum())
    return ClusterModel(centroids, assign, inertia, trace, iters=it)


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    an = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-300)
    bn = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-300)
    return an @ bn.T


def assign_pseudo_labels(model: ClusterModel, labeled_indices, labeled_labels, pool) -> ClusterModel:
    """Majority vote of labeled members per cluster (ties -> smallest class).

    A cluster without labeled members takes the label of the labeled feature
    most cosine-similar to its centroid.
    """
    idx = np.asarray(labeled_indices, dtype=np.int64)
    labels = np.asarray(labeled_labels, dtype=np.int64)
    if len(idx) == 0:
        raise ValueError("labeled set is empty")
    if len(idx) != len(labels):
        raise ValueError("labeled indices and labels differ in length")
    x = _rows(pool)
    n_classes = int(labels.max()) + 1
    label_map = np.full(model.k, -1, dtype=np.int64)
    clusters = model.assign[idx]
    for c in range(model.k):
        member_labels = labels[clusters == c]
        if len(member_labels):
            label_map[c] = int(np.argmax(np.bincount(member_labels, minlength=n_classes)))
    orphans = np.flatnonzero(label_map < 0)
    if len(orphans):
        sims = _cosine(model.centroids[orphans], x[idx])
        label_map[orphans] = labels[np.argmax(sims, axis=1)]
    return replace(model, label_map=label_map)


def dump_assignments(model: ClusterModel, path) -> None:
    labels = model.point_labels() if model.label_map is not None else np.full(len(model.assign), -1)
    with open(path, "w") as fh:
        for i, (c, y) in enumerate(zip(model.assign.tolist(), labels.tolist())):
            fh.write(f"{i},{c},{y}\n")
