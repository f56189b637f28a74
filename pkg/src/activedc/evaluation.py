"""Desk-scale evaluation: synthetic pools, a linear probe, benchmark grid."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .baselines import SELECTORS
from .calibration import CalibrationConfig, ExtendedPool, calibrate_selection
from .features import FeaturePool, LabelFile
from .selection import SelectionConfig, select_parametric

log = logging.getLogger(__name__)

MAX_MEAN_COSINE = 0.9
MAX_REJECTIONS = 1000


@dataclass
class SyntheticSpec:
    classes: int = 10
    dim: int = 64
    per_class: int = 1250
    concentration: float = 5.0
    seed: int = 0
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if not self.concentration > 0:
            raise ValueError("concentration must be > 0")
        if not 0 <= self.test_fraction < 1:
            raise ValueError("test_fraction must be in [0,1)")


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def gen_synthetic(spec: SyntheticSpec):
    """Returns (train pool, train truth, test pool, test truth)."""
    rng = np.random.default_rng(spec.seed)
    means = []
    for y in range(spec.classes):
        for _ in range(MAX_REJECTIONS):
            cand = _unit(rng.standard_normal(spec.dim))
            if all(float(cand @ m) < MAX_MEAN_COSINE for m in means):
                means.append(cand)
                break
        else:
            raise RuntimeError(
                f"could not place {spec.classes} class means with cosine < {MAX_MEAN_COSINE} in d={spec.dim}"
            )
    means = np.array(means)
    n_test = int(round(spec.per_class * spec.test_fraction))
    train_x, train_y, test_x, test_y = [], [], [], []
    for y in range(spec.classes):
        noise = rng.standard_normal((spec.per_class, spec.dim)) / spec.concentration
        x = _unit(means[y] + noise)
        test_x.append(x[:n_test])
        train_x.append(x[n_test:])
        test_y.append(np.full(n_test, y))
        train_y.append(np.full(spec.per_class - n_test, y))
    tr_x, tr_y = np.concatenate(train_x), np.concatenate(train_y)
    te_x, te_y = np.concatenate(test_x), np.concatenate(test_y)
    perm = rng.permutation(len(tr_x))
    tr_x, tr_y = tr_x[perm], tr_y[perm]
    train = FeaturePool(tr_x, normalized=True)
    truth = LabelFile(np.arange(len(tr_y)), tr_y)
    if n_test == 0:
        return train, truth, None, None
    perm = rng.permutation(len(te_x))
    test = FeaturePool(te_x[perm], normalized=True)
    return train, truth, test, LabelFile(np.arange(n_test * spec.classes), te_y[perm])


@dataclass
class ProbeConfig:
    epochs: int = 200
    learning_rate: float = 0.5
    weight_decay: float = 1e-4
    n_classes: int | None = None


@dataclass
class ProbeModel:
    weights: np.ndarray
    bias: np.ndarray
    config: ProbeConfig = field(default_factory=ProbeConfig)
    loss_trace: list[float] = field(default_factory=list)

    def scores(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights.T + self.bias

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.scores(x), axis=1)


def probe_loss_and_grad(weights, bias, x, y, weight_decay):
    """Mean cross-entropy plus (weight_decay / 2) * ||W||^2; bias undecayed."""
    logits = x @ weights.T + bias
    logits = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logits).sum(axis=1))
    n = len(x)
    loss = float((logz - logits[np.arange(n), y]).mean() + 0.5 * weight_decay * (weights**2).sum())
    probs = np.exp(logits - logz[:, None])
    probs[np.arange(n), y] -= 1.0
    probs /= n
    return loss, probs.T @ x + weight_decay * weights, probs.sum(axis=0)


def train_probe(pool, extended: ExtendedPool | tuple, config: ProbeConfig | None = None) -> ProbeModel:
    """Full-batch gradient descent on the extended pool's rows and labels.

    ``extended`` may also be an ``(indices, labels)`` pair.
    """
    config = config or ProbeConfig()
    if isinstance(extended, ExtendedPool):
        idx, y = extended.indices, extended.labels
    else:
        idx, y = (np.asarray(a, dtype=np.int64) for a in extended)
    if len(idx) == 0:
        raise ValueError("extended pool is empty")
    if len(np.unique(y)) < 2:
        raise ValueError("probe training needs at least 2 classes")
    feats = pool.data if isinstance(pool, FeaturePool) else np.asarray(pool)
    x = feats[idx].astype(np.float64)
    k = config.n_classes or int(y.max()) + 1
    w = np.zeros((k, x.shape[1]))
    b = np.zeros(k)
    trace = []
    for _ in range(config.epochs):
        loss, gw, gb = probe_loss_and_grad(w, b, x, y, config.weight_decay)
        trace.append(loss)
        w -= config.learning_rate * gw
        b -= config.learning_rate * gb
    if not (np.isfinite(w).all() and np.isfinite(b).all()):
        raise FloatingPointError("probe weights diverged")
    return ProbeModel(w, b, config, trace)


def evaluate(probe: ProbeModel, test_pool, truth) -> float:
    """Top-1 accuracy; argmax ties resolve to the smallest class id."""
    x = test_pool.data if isinstance(test_pool, FeaturePool) else np.asarray(test_pool)
    y = truth.lookup(np.arange(len(x))) if isinstance(truth, LabelFile) else np.asarray(truth)
    if len(x) == 0:
        raise ValueError("empty test set")
    if x.shape[1] != probe.weights.shape[1]:
        raise ValueError("probe and test pool dimensions differ")
    return float((probe.predict(x) == y).mean())


def parse_method(method: str) -> tuple[str, bool]:
    base, _, suffix = method.partition("+")
    if suffix not in ("", "dc"):
        raise ValueError(f"unknown method suffix in {method!r}")
    if base != "parametric" and base not in SELECTORS:
        raise ValueError(f"unknown selector {base!r}")
    return base, suffix == "dc"


def budget_for_ratio(ratio: float, n: int) -> int:
    return max(1, int(round(ratio * n / 100)))


@dataclass
class BenchmarkReport:
    rows: list[dict]
    summary: list[dict]

    def cell(self, method, ratio) -> dict:
        for row in self.summary:
            if row["method"] == method and row["ratio"] == ratio:
                return row
        raise KeyError((method, ratio))

    def rows_csv(self) -> str:
        return _to_csv(self.rows, ["method", "ratio", "seed", "accuracy"])

    def summary_csv(self) -> str:
        return _to_csv(self.summary, ["method", "ratio", "mean", "std"])


def _to_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    return buf.getvalue()


def benchmark(
    methods,
    ratios,
    seeds,
    spec: SyntheticSpec | None = None,
    data=None,
    selection_kw: dict | None = None,
    calibration_kw: dict | None = None,
    probe: ProbeConfig | None = None,
) -> BenchmarkReport:
    """Accuracy of every (method, ratio, seed) cell plus mean/std per (method, ratio).

    ``data`` overrides ``spec`` with a ready (train, truth, test, test_truth)
    tuple. A selection is computed once per (selector, ratio, seed) and reused
    by its ``+dc`` variant.
    """
    parsed = [(m, *parse_method(m)) for m in methods]
    if not parsed or not ratios or not seeds:
        raise ValueError("benchmark needs at least one method, ratio and seed")
    spec = spec or SyntheticSpec()
    train, truth, test, test_truth = data if data is not None else gen_synthetic(spec)
    n = train.count
    n_classes = int(truth.labels.max()) + 1
    probe = probe or ProbeConfig(n_classes=n_classes)
    selection_kw = dict(selection_kw or {})
    calibration_kw = dict(calibration_kw or {})
    calibration_kw.setdefault("n_classes", n_classes)
    rows = []
    for ratio in ratios:
        budget = budget_for_ratio(ratio, n)
        for seed in seeds:
            cache = {}
            for method, base, use_dc in parsed:
                if base not in cache:
                    if base == "parametric":
                        cfg = SelectionConfig(budget=budget, seed=seed, **selection_kw)
                        sel = select_parametric(train, cfg)
                    else:
                        sel = SELECTORS[base](train, budget, seed)
                    cache[base] = sel.with_labels(truth.lookup(sel.indices))
                labeled = cache[base]
                if use_dc:
                    cal = CalibrationConfig(ratio_r=ratio, seed=seed, **calibration_kw)
                    ext = calibrate_selection(train, labeled, cal)
                    pair = (ext.indices, ext.labels)
                else:
                    pair = (labeled.indices, labeled.labels)
                if len(np.unique(pair[1])) < 2:
                    acc = float((test_truth.labels == pair[1][0]).mean())
                else:
                    acc = evaluate(train_probe(train, pair, probe), test, test_truth)
                log.info("%s ratio=%g seed=%d acc=%.4f", method, ratio, seed, acc)
                rows.append({"method": method, "ratio": ratio, "seed": seed, "accuracy": acc})
    summary = []
    for method, _, _ in parsed:
        for ratio in ratios:
            accs = np.array([r["accuracy"] for r in rows if r["method"] == method and r["ratio"] == ratio])
            std = float(accs.std(ddof=1)) if len(accs) > 1 else 0.0
            summary.append({"method": method, "ratio": ratio, "mean": float(accs.mean()), "std": std})
    return BenchmarkReport(rows, summary)
