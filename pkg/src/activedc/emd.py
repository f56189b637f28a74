"""Exact Earth Mover's Distance between small histograms.

Solves the transportation problem with successive shortest paths on the
residual network (Bellman-Ford, since residual reverse arcs carry negative
cost). Intended for K up to a few dozen bins.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-15


def _normalize(h, name):
    h = np.asarray(h, dtype=np.float64).ravel()
    if (h < 0).any():
        raise ValueError(f"{name} has negative mass")
    total = h.sum()
    if not total > 0:
        raise ValueError(f"{name} has zero total mass and cannot be normalized")
    return h / total


def transport_plan(p, q, ground) -> np.ndarray:
    p = _normalize(p, "histP")
    q = _normalize(q, "histQ")
    cost = np.asarray(ground, dtype=np.float64)
    k, m = len(p), len(q)
    if cost.shape != (k, m):
        raise ValueError(f"ground distance must be {k}x{m}, got {cost.shape}")
    supply, demand = p.copy(), q.copy()
    flow = np.zeros((k, m))
    for _ in range(4 * (k + m) ** 2 + 16):
        if supply.sum() <= 1e-13 or demand.sum() <= 1e-13:
            break
        path = _shortest_path(supply, demand, flow, cost)
        if path is None:
            break
        src, arcs, dst = path
        amount = min(supply[src], demand[dst])
        for i, j, forward in arcs:
            if not forward:
                amount = min(amount, flow[i, j])
        for i, j, forward in arcs:
            flow[i, j] += amount if forward else -amount
        supply[src] -= amount
        demand[dst] -= amount
    return np.maximum(flow, 0.0)


def _shortest_path(supply, demand, flow, cost):
    """Cheapest augmenting path from a supply bin with mass to a demand bin.

    Returns ``(source bin, [(i, j, forward)], sink bin)`` or None.
    """
    k, m = cost.shape
    base = np.where(supply > _EPS, 0.0, np.inf)
    dist_s = base.copy()
    pred_s = np.full(k, -1)  # -1: reached directly from the source
    dist_d = np.full(m, np.inf)
    pred_d = np.full(m, -1)
    reverse_ok = flow > _EPS
    for _ in range(k + m + 2):
        cand = dist_s[:, None] + cost
        best_i = np.argmin(cand, axis=0)
        best = cand[best_i, np.arange(m)]
        upd_d = best < dist_d - 1e-14
        dist_d = np.where(upd_d, best, dist_d)
        pred_d = np.where(upd_d, best_i, pred_d)

        back = np.where(reverse_ok, dist_d[None, :] - cost, np.inf)
        best_j = np.argmin(back, axis=1)
        bestb = back[np.arange(k), best_j]
        upd_s = bestb < dist_s - 1e-14
        dist_s = np.where(upd_s, bestb, dist_s)
        pred_s = np.where(upd_s, best_j, pred_s)
        if not upd_d.any() and not upd_s.any():
            break
    open_d = np.where(demand > _EPS, dist_d, np.inf)
    dst = int(np.argmin(open_d))
    if not np.isfinite(open_d[dst]):
        return None
    arcs = []
    j = dst
    seen = set()
    while True:
        i = int(pred_d[j])
        arcs.append((i, j, True))
        if pred_s[i] < 0:
            break
        if i in seen:
            raise RuntimeError("cycle in shortest-path tree")
        seen.add(i)
        j = int(pred_s[i])
        arcs.append((i, j, False))
    arcs.reverse()
    return i, arcs, dst


def emd(hist_p, hist_q, ground) -> float:
    """Optimal transport cost between two histograms (normalized to sum 1)."""
    cost = np.asarray(ground, dtype=np.float64)
    plan = transport_plan(hist_p, hist_q, cost)
    return float((plan * cost).sum())
