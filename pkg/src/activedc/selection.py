"""Parametric annotation-subset selection.

B unit-norm parameter vectors are fitted to the pool by minimising

    L = -mean_i cos(f_i, theta_{c_i}) / tau
        + balance * mean_j log sum_{k != j} exp(cos(theta_j, theta_k) / tau)

where c_i is the parameter closest to f_i. After optimisation each parameter
is matched to its most similar pool row.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ._parallel import map_chunks, ordered_sum
from .features import FeaturePool

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CONVERGENCE_TOL = 1e-6
CONVERGENCE_WINDOW = 50


class SelectionError(RuntimeError):
    pass


@dataclass
class SelectionConfig:
    budget: int
    temperature: float = 0.07
    balance: float = 1.0
    learning_rate: float = 1e-3
    max_iters: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass
class SelectionResult:
    indices: np.ndarray
    loss_trace: list[float] = field(default_factory=list)
    method: str = "parametric"
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("selection indices are not distinct")

    @property
    def budget(self) -> int:
        return len(self.indices)

    @property
    def final_loss(self) -> float | None:
        return self.loss_trace[-1] if self.loss_trace else None

    def with_labels(self, labels) -> "SelectionResult":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != self.indices.shape:
            raise ValueError("one label per selected index required")
        return SelectionResult(self.indices, list(self.loss_trace), self.method, labels)

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "indices": self.indices.tolist(),
            "final_loss": self.final_loss,
            "iters": len(self.loss_trace),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict, method: str = "loaded") -> "SelectionResult":
        indices = doc["indices"]
        if len(indices) != doc.get("budget", len(indices)):
            raise ValueError("budget does not match number of indices")
        trace = [doc["final_loss"]] if doc.get("final_loss") is not None else []
        return cls(np.array(indices, dtype=np.int64), trace, method)


def _rows(pool) -> np.ndarray:
    if isinstance(pool, FeaturePool):
        return pool.data.astype(np.float64, copy=False)
    return np.asarray(pool, dtype=np.float64)


def _check_budget(budget: int, n: int) -> None:
    if budget > n:
        raise ValueError(f"budget {budget} exceeds pool size {n}")


def init_params(pool: FeaturePool, config: SelectionConfig) -> np.ndarray:
    """Start from B distinct pool rows drawn with ``config.seed``."""
    feats = _rows(pool)
    _check_budget(config.budget, len(feats))
    rng = np.random.default_rng(config.seed)
    idx = rng.choice(len(feats), size=config.budget, replace=False)
    params = feats[idx].copy()
    return params / np.linalg.norm(params, axis=1, keepdims=True)


def assign_nearest(pool, params) -> np.ndarray:
    """Index of the most cosine-similar parameter for every pool row."""
    feats, params = _rows(pool), np.asarray(params, dtype=np.float64)
    if feats.shape[1] != params.shape[1]:
        raise ValueError(f"dimension mismatch: pool d={feats.shape[1]}, params d={params.shape[1]}")
    parts = map_chunks(lambda lo, hi: np.argmax(feats[lo:hi] @ params.T, axis=1), len(feats))
    return np.concatenate(parts).astype(np.int64)


def _fit_term(feats, params, with_grad):
    """Sum of max similarities and per-parameter sums of assigned rows."""
    b = len(params)

    def work(lo, hi):
        sims = feats[lo:hi] @ params.T
        c = np.argmax(sims, axis=1)
        total = sims[np.arange(hi - lo), c].sum()
        if not with_grad:
            return total, None
        onehot = np.zeros((b, hi - lo))
        onehot[c, np.arange(hi - lo)] = 1.0
        return total, onehot @ feats[lo:hi]

    parts = map_chunks(work, len(feats))
    total = ordered_sum([p[0] for p in parts])
    sums = ordered_sum([p[1] for p in parts]) if with_grad else None
    return total, sums


def _diversity_term(params, temperature):
    """Mean over j of log sum_{k != j} exp(cos/tau), plus the softmax weights."""
    b = len(params)
    if b == 1:
        return 0.0, np.zeros((1, 1))
    logits = params @ params.T / temperature
    np.fill_diagonal(logits, -np.inf)
    top = logits.max(axis=1, keepdims=True)
    w = np.exp(logits - top)
    z = w.sum(axis=1, keepdims=True)
    lse = (top + np.log(z)).ravel()
    return float(lse.mean()), w / z


def loss_and_gradient(pool, params, config: SelectionConfig):
    feats, params = _rows(pool), np.asarray(params, dtype=np.float64)
    n, b, tau = len(feats), len(params), config.temperature
    fit, sums = _fit_term(feats, params, with_grad=True)
    div, probs = _diversity_term(params, tau)
    loss = -fit / (n * tau) + config.balance * div
    grad = -sums / (n * tau)
    if b > 1:
        grad = grad + config.balance / (b * tau) * ((probs + probs.T) @ params)
    return float(loss), grad


def compute_loss(pool, params, config: SelectionConfig) -> float:
    feats, params = _rows(pool), np.asarray(params, dtype=np.float64)
    fit, _ = _fit_term(feats, params, with_grad=False)
    div, _ = _diversity_term(params, config.temperature)
    return float(-fit / (len(feats) * config.temperature) + config.balance * div)


def loss_gradient(pool, params, config: SelectionConfig) -> np.ndarray:
    """Gradient w.r.t. the parameters with nearest assignments held fixed."""
    return loss_and_gradient(pool, params, config)[1]


def optimize(pool: FeaturePool, config: SelectionConfig, params=None, on_step=None):
    """Adam with per-step re-projection onto the unit sphere.

    ``on_step(iteration, params)`` is called after every projected update.
    Returns ``(params, loss_trace)``.
    """
    if isinstance(pool, FeaturePool) and not pool.normalized:
        raise ValueError("selection requires an L2-normalized pool")
    params = init_params(pool, config) if params is None else np.array(params, dtype=np.float64)
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    trace: list[float] = []
    for t in range(1, config.max_iters + 1):
        loss, grad = loss_and_gradient(pool, params, config)
        if not np.isfinite(loss) or not np.isfinite(grad).all():
            raise SelectionError(f"non-finite loss {loss} at iteration {t}")
        trace.append(loss)
        if len(trace) > CONVERGENCE_WINDOW and abs(
            trace[-1] - trace[-1 - CONVERGENCE_WINDOW]
        ) < CONVERGENCE_TOL:
            log.debug("converged after %d iterations", t)
            break
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * grad
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * grad * grad
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        params = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        params /= np.linalg.norm(params, axis=1, keepdims=True)
        if on_step is not None:
            on_step(t, params)
    return params, trace


def match_selection(pool, params) -> SelectionResult:
    """Match each parameter to its most similar unused pool row, j ascending."""
    feats, params = _rows(pool), np.asarray(params, dtype=np.float64)
    _check_budget(len(params), len(feats))
    sims = params @ feats.T
    used = np.zeros(len(feats), dtype=bool)
    chosen = []
    for j in range(len(params)):
        best = int(np.argmax(sims[j]))
        if used[best]:
            order = np.argsort(-sims[j], kind="stable")
            best = int(order[np.argmax(~used[order])])
        used[best] = True
        chosen.append(best)
    return SelectionResult(np.array(chosen, dtype=np.int64))


def select_parametric(pool: FeaturePool, config: SelectionConfig) -> SelectionResult:
    params, trace = optimize(pool, config)
    result = match_selection(pool, params)
    result.loss_trace = trace
    return result
