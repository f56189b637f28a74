"""Slow, independently written reference implementations used by the tests.

Nothing here imports from the package under test.
"""

import math

import numpy as np
from scipy.optimize import linprog


def argmax_cosine(rows, queries, excluded=()):
    """Double loop; first maximum wins."""
    excluded = set(int(i) for i in excluded)
    out = []
    for q in queries:
        qn = math.sqrt(sum(v * v for v in q))
        best, best_i = -math.inf, -1
        for i, r in enumerate(rows):
            if i in excluded:
                continue
            rn = math.sqrt(sum(v * v for v in r))
            c = sum(a * b for a, b in zip(q, r)) / (qn * rn)
            if c > best:
                best, best_i = c, i
        out.append(best_i)
    return out


def selection_loss(pool, params, assign, tau, balance=1.0):
    """Loss with the nearest assignments given explicitly."""
    n, b = len(pool), len(params)
    fit = sum(float(np.dot(pool[i], params[assign[i]])) for i in range(n)) / (n * tau)
    reg = 0.0
    if b > 1:
        for j in range(b):
            reg += math.log(sum(math.exp(float(np.dot(params[j], params[k])) / tau) for k in range(b) if k != j))
        reg /= b
    return -fit + balance * reg


def central_difference(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        down = f(x)
        x[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def k_center_greedy(points, budget, first):
    chosen = [first]
    while len(chosen) < budget:
        best, best_i = -1.0, -1
        for i, p in enumerate(points):
            if i in chosen:
                continue
            d = min(math.dist(p, points[c]) for c in chosen)
            if d > best:
                best, best_i = d, i
        chosen.append(best_i)
    return chosen


def transport_lp(p, q, ground):
    p = np.asarray(p, float) / np.sum(p)
    q = np.asarray(q, float) / np.sum(q)
    k, m = len(p), len(q)
    rows = []
    for i in range(k):
        a = np.zeros((k, m))
        a[i, :] = 1
        rows.append(a.ravel())
    for j in range(m):
        a = np.zeros((k, m))
        a[:, j] = 1
        rows.append(a.ravel())
    res = linprog(np.asarray(ground, float).ravel(), A_eq=np.array(rows), b_eq=np.concatenate([p, q]),
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return float(res.fun)


def two_pass_covariance(rows):
    n, d = len(rows), len(rows[0])
    mean = [sum(r[c] for r in rows) / n for c in range(d)]
    cov = np.zeros((d, d))
    for a in range(d):
        for b in range(d):
            cov[a, b] = sum((r[a] - mean[a]) * (r[b] - mean[b]) for r in rows) / (n - 1)
    return cov


def softmax_regression_loss(w, b, x, y, weight_decay):
    total = 0.0
    for xi, yi in zip(x, y):
        logits = [float(np.dot(wk, xi)) + bk for wk, bk in zip(w, b)]
        top = max(logits)
        lse = top + math.log(sum(math.exp(v - top) for v in logits))
        total += lse - logits[yi]
    return total / len(x) + 0.5 * weight_decay * float((np.asarray(w) ** 2).sum())
