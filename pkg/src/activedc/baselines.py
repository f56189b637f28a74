"""Reference selection strategies: random, k-center-greedy (FDS), k-means."""

from __future__ import annotations

import numpy as np

from ._parallel import map_chunks
from .clustering import kmeans, sq_distances
from .selection import SelectionResult, _check_budget, _rows


def select_random(pool, budget: int, seed: int = 0) -> SelectionResult:
    n = len(_rows(pool))
    _check_budget(budget, n)
    rng = np.random.default_rng(seed)
    return SelectionResult(rng.choice(n, size=budget, replace=False), method="random")


def select_k_center_greedy(pool, budget: int, seed: int = 0, return_radii: bool = False):
    """Farthest-first traversal under Euclidean distance.

    The first center is drawn uniformly with ``seed``; each following center
    is the row farthest from its nearest existing center (ties -> smallest
    index). With ``return_radii`` the covering radius after every addition is
    returned as well.
    """
    x = _rows(pool)
    n = len(x)
    _check_budget(budget, n)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]

    def dist_to(c):
        return np.concatenate(
            map_chunks(lambda lo, hi: sq_distances(x[lo:hi], x[c : c + 1]).ravel(), n)
        )

    closest = dist_to(chosen[0])
    closest[chosen[0]] = 0.0
    radii = [float(np.sqrt(closest.max()))]
    while len(chosen) < budget:
        masked = closest.copy()
        masked[chosen] = -1.0
        nxt = int(np.argmax(masked))
        chosen.append(nxt)
        closest = np.minimum(closest, dist_to(nxt))
        closest[nxt] = 0.0
        radii.append(float(np.sqrt(closest.max())))
    result = SelectionResult(np.array(chosen), method="kcenter")
    return (result, radii) if return_radii else result


def select_k_means(pool, budget: int, seed: int = 0, max_iters: int = 100) -> SelectionResult:
    """K-Means with K = budget; each centroid takes its nearest unused row."""
    x = _rows(pool)
    _check_budget(budget, len(x))
    model = kmeans(x, budget, seed=seed, max_iters=max_iters)
    d = sq_distances(model.centroids, x)
    used = np.zeros(len(x), dtype=bool)
    chosen = []
    for j in range(budget):
        best = int(np.argmin(d[j]))
        if used[best]:
            order = np.argsort(d[j], kind="stable")
            best = int(order[np.argmax(~used[order])])
        used[best] = True
        chosen.append(best)
    return SelectionResult(np.array(chosen), method="kmeans")


SELECTORS = {
    "random": select_random,
    "kcenter": select_k_center_greedy,
    "kmeans": select_k_means,
}
