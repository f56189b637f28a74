"""Distribution calibration: pseudo-label extra pool samples for the selected set.

Chain, applied after the oracle has labeled a selection:

1. power-transform the whole pool (sign-preserving Tukey ladder),
2. K-Means on the transformed pool, clusters named by the labeled samples,
3. per-class mean / covariance, trimmed mean, blended with the labeled mean,
4. draw n_fold Gaussian samples per labeled sample of each class,
5. retrieve the most cosine-similar real (non-selected) pool row per sample,
6. drop retrieved rows that worsen the EMD between the extended set's
   cluster histogram and the pool's,
7. union with the oracle-labeled selection.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._parallel import map_chunks
from .clustering import ClusterModel, assign_pseudo_labels, kmeans
from .emd import emd
from .features import FeaturePool
from .selection import SelectionResult

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-6
SINGLETON_COV = 1e-6
ALPHA_PRESETS = {"cifar10": 0.7, "cifar100": 0.07, "imagenet": 0.14}


@dataclass
class CalibrationConfig:
    ratio_r: float
    tukey_lambda: float = 0.5
    alpha: float = 0.7
    xi: float = 0.2
    xi_mode: str = "all"
    trim_fraction: float = 0.9
    n_fold: int = 2
    seed: int = 0
    n_classes: int | None = None
    kmeans_iters: int = 100
    kmeans_restarts: int = 10
    # ablation switches
    calibrate: bool = True
    filter: bool = True

    def __post_init__(self):
        if not 0 <= self.ratio_r <= 100:
            raise ValueError("ratio_r must be in [0,100]")
        if not 0 < self.trim_fraction <= 1:
            raise ValueError("trim_fraction must be in (0,1]")
        if self.n_fold < 1:
            raise ValueError("n_fold must be >= 1")
        if self.xi_mode not in ("diagonal", "all"):
            raise ValueError("xi_mode must be 'diagonal' or 'all'")
        if self.n_classes is not None and self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")


@dataclass
class ClassStatistics:
    label: int
    raw_mean: np.ndarray
    raw_cov: np.ndarray
    trimmed_mean: np.ndarray
    labeled_mean: np.ndarray | None
    member_count: int
    labeled_count: int = 0


@dataclass
class CalibratedStats:
    label: int
    mean: np.ndarray
    cov: np.ndarray
    beta: float


@dataclass
class RetrievedSet:
    indices: np.ndarray
    labels: np.ndarray
    scores: np.ndarray
    emd_before: float | None = None
    emd_after: float | None = None

    def __len__(self):
        return len(self.indices)

    def subset(self, keep) -> "RetrievedSet":
        keep = np.asarray(keep)
        return RetrievedSet(self.indices[keep], self.labels[keep], self.scores[keep])


@dataclass
class ExtendedPool:
    indices: np.ndarray
    labels: np.ndarray
    provenance: np.ndarray
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.provenance = np.asarray(self.provenance, dtype=object)
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("extended pool indices are not distinct")

    def __len__(self):
        return len(self.indices)

    def counts(self) -> dict:
        return {p: int((self.provenance == p).sum()) for p in ("oracle", "generated")}

    def to_csv(self) -> str:
        return "".join(
            f"{i},{y},{p}\n" for i, y, p in zip(self.indices.tolist(), self.labels.tolist(), self.provenance)
        )

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read(cls, path) -> "ExtendedPool":
        idx, lab, prov = [], [], []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                i, y, p = line.split(",")
                if p not in ("oracle", "generated"):
                    raise ValueError(f"unknown provenance {p!r}")
                idx.append(int(i))
                lab.append(int(y))
                prov.append(p)
        return cls(np.array(idx, dtype=np.int64), np.array(lab, dtype=np.int64), np.array(prov, dtype=object))


def _rows(pool) -> np.ndarray:
    if isinstance(pool, FeaturePool):
        return pool.data.astype(np.float64, copy=False)
    return np.asarray(pool, dtype=np.float64)


def tukey_transform(pool, lam: float):
    """Odd extension of Tukey's ladder: sign(x)|x|^lam, or sign(x)log(1+|x|) at 0."""
    if isinstance(pool, FeaturePool):
        if lam == 1:
            return pool
        return FeaturePool(tukey_transform(pool.as_float64(), lam), normalized=False)
    x = np.asarray(pool)
    if lam == 1:
        return x.copy()
    x = x.astype(np.float64)
    if lam == 0:
        return np.sign(x) * np.log1p(np.abs(x))
    return np.sign(x) * np.abs(x) ** lam


def calibration_beta(alpha: float, ratio_r: float) -> float:
    if not 0 <= ratio_r <= 100:
        raise ValueError("ratio_r must be in [0,100]")
    return 1.0 - math.exp(-alpha * ratio_r)


def trimmed_mean(x: np.ndarray, fraction: float) -> np.ndarray:
    """Mean of the ceil(fraction * n) rows closest to the plain mean."""
    mean = x.mean(axis=0)
    if fraction >= 1:
        return mean
    keep = math.ceil(fraction * len(x))
    dist = ((x - mean) ** 2).sum(axis=1)
    order = np.argsort(dist, kind="stable")[:keep]
    return x[np.sort(order)].mean(axis=0)


def covariance(x: np.ndarray) -> np.ndarray:
    """Unbiased two-pass covariance (rows are observations)."""
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (len(x) - 1)
    return (cov + cov.T) / 2


def class_statistics(
    pool_transformed, cluster_model: ClusterModel, labeled_indices, labeled_labels, trim_fraction: float = 0.9
) -> dict[int, ClassStatistics]:
    """Statistics per class label; clusters sharing a label are merged.

    A labeled class that no cluster maps to falls back to its labeled members.
    """
    x = _rows(pool_transformed)
    point_labels = cluster_model.point_labels()
    lab_idx = np.asarray(labeled_indices, dtype=np.int64)
    lab_y = np.asarray(labeled_labels, dtype=np.int64)
    classes = sorted(set(np.unique(point_labels).tolist()) | set(np.unique(lab_y).tolist()))
    out = {}
    for y in classes:
        members = np.flatnonzero(point_labels == y)
        own = lab_idx[lab_y == y]
        if len(members) == 0:
            log.warning("class %d owns no cluster; using its labeled samples", y)
            members = own
        feats = x[members]
        if len(feats) < 2:
            warnings.warn(f"class {y} has a single member; covariance set to {SINGLETON_COV}*I")
            cov = SINGLETON_COV * np.eye(x.shape[1])
        else:
            cov = covariance(feats)
        out[y] = ClassStatistics(
            label=y,
            raw_mean=feats.mean(axis=0),
            raw_cov=cov,
            trimmed_mean=trimmed_mean(feats, trim_fraction),
            labeled_mean=x[own].mean(axis=0) if len(own) else None,
            member_count=len(feats),
            labeled_count=len(own),
        )
    return out


def repair_covariance(cov: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    sym = (cov + cov.T) / 2
    vals, vecs = np.linalg.eigh(sym)
    vals = np.maximum(vals, floor)
    out = (vecs * vals) @ vecs.T
    return (out + out.T) / 2


def calibrate_statistics(stats: dict[int, ClassStatistics], config: CalibrationConfig) -> dict[int, CalibratedStats]:
    beta = calibration_beta(config.alpha, config.ratio_r)
    out = {}
    for y, s in stats.items():
        d = len(s.raw_mean)
        if not config.calibrate:
            out[y] = CalibratedStats(y, s.raw_mean.copy(), repair_covariance(s.raw_cov), 0.0)
            continue
        b = beta if s.labeled_mean is not None else 0.0
        mean = s.trimmed_mean if b == 0.0 else (1 - b) * s.trimmed_mean + b * s.labeled_mean
        shift = np.eye(d) if config.xi_mode == "diagonal" else np.ones((d, d))
        cov = s.raw_cov + config.xi * shift
        out[y] = CalibratedStats(y, mean, repair_covariance(cov), b)
    return out


def class_rng(seed: int, label: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(label)])


def generate_features(
    calibrated: dict[int, CalibratedStats], labeled_counts: dict[int, int], config: CalibrationConfig
) -> dict[int, np.ndarray]:
    """n_fold draws per labeled sample of each class from N(mean, cov)."""
    out = {}
    for y in sorted(labeled_counts):
        m = labeled_counts[y]
        if m == 0:
            continue
        if y not in calibrated:
            raise KeyError(f"no calibrated statistics for class {y}")
        c = calibrated[y]
        vals, vecs = np.linalg.eigh((c.cov + c.cov.T) / 2)
        if vals.min() < -1e-9:
            raise ValueError(f"covariance of class {y} is not PSD (min eigenvalue {vals.min():.3g})")
        scale = np.sqrt(np.maximum(vals, 0.0))
        z = class_rng(config.seed, y).standard_normal((config.n_fold * m, len(c.mean)))
        out[y] = c.mean + (z * scale) @ vecs.T
    return out


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0, 1.0, norms)


def retrieve_real(generated: dict[int, np.ndarray], pool_transformed, excluded=()) -> RetrievedSet:
    """Most cosine-similar non-excluded pool row for every generated vector.

    A row hit several times keeps one entry; across classes the highest
    similarity wins (ties -> smaller class).
    """
    x = _unit_rows(_rows(pool_transformed))
    n = len(x)
    mask = np.zeros(n, dtype=bool)
    excl = np.asarray(list(excluded), dtype=np.int64)
    mask[excl] = True
    if mask.all():
        raise ValueError("excluded set covers the whole pool")
    classes = sorted(generated)
    if not classes:
        return RetrievedSet(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
    queries = _unit_rows(np.concatenate([generated[y] for y in classes]))
    qlabels = np.concatenate([np.full(len(generated[y]), y) for y in classes])

    def work(lo, hi):
        sims = queries @ x[lo:hi].T
        sims[:, mask[lo:hi]] = -np.inf
        j = np.argmax(sims, axis=1)
        return j + lo, sims[np.arange(len(queries)), j]

    best_idx = np.full(len(queries), -1)
    best_sim = np.full(len(queries), -np.inf)
    for idx, sim in map_chunks(work, n):
        better = sim > best_sim
        best_idx = np.where(better, idx, best_idx)
        best_sim = np.where(better, sim, best_sim)

    claims: dict[int, tuple[float, int]] = {}
    for i, s, y in zip(best_idx.tolist(), best_sim.tolist(), qlabels.tolist()):
        prev = claims.get(i)
        if prev is None or s > prev[0] or (s == prev[0] and y < prev[1]):
            claims[i] = (s, y)
    order = sorted(claims, key=lambda i: (claims[i][1], i))
    return RetrievedSet(
        np.array(order, dtype=np.int64),
        np.array([claims[i][1] for i in order], dtype=np.int64),
        np.array([claims[i][0] for i in order]),
    )


def centroid_ground(centroids: np.ndarray) -> np.ndarray:
    c = _unit_rows(np.asarray(centroids, dtype=np.float64))
    ground = np.clip(1.0 - c @ c.T, 0.0, 2.0)
    np.fill_diagonal(ground, 0.0)
    return (ground + ground.T) / 2


def cluster_histogram(cluster_model: ClusterModel, indices) -> np.ndarray:
    return np.bincount(cluster_model.assign[np.asarray(indices, dtype=np.int64)], minlength=cluster_model.k)


def emd_filter(
    retrieved: RetrievedSet, pool_transformed, oracle_indices, cluster_model: ClusterModel
) -> RetrievedSet:
    """Greedily drop retrieved rows whose removal lowers the EMD to the pool.

    Rows are tried farthest-from-class-mean first; passes repeat until none
    is dropped. The result carries ``emd_before`` / ``emd_after``.
    """
    x = _rows(pool_transformed)
    ground = centroid_ground(cluster_model.centroids)
    target = np.bincount(cluster_model.assign, minlength=cluster_model.k).astype(np.float64)
    oracle_indices = np.asarray(oracle_indices, dtype=np.int64)
    hist = cluster_histogram(cluster_model, np.concatenate([oracle_indices, retrieved.indices]))
    cache: dict[tuple, float] = {}

    def distance(h):
        key = tuple(h.tolist())
        if key not in cache:
            cache[key] = emd(h, target, ground)
        return cache[key]

    before = distance(hist)
    if len(retrieved) == 0:
        out = retrieved.subset(np.zeros(0, dtype=np.int64))
        out.emd_before = out.emd_after = before
        return out

    point_labels = cluster_model.point_labels()
    dist = np.empty(len(retrieved))
    for y in np.unique(retrieved.labels):
        members = np.flatnonzero(point_labels == y)
        sel = retrieved.labels == y
        if len(members) == 0:
            members = retrieved.indices[sel]
        center = x[members].mean(axis=0)
        dist[sel] = np.linalg.norm(x[retrieved.indices[sel]] - center, axis=1)
    order = np.lexsort((retrieved.indices, -dist))
    bins = cluster_model.assign[retrieved.indices]

    keep = np.ones(len(retrieved), dtype=bool)
    current = before
    dropped = True
    while dropped:
        dropped = False
        for e in order:
            if not keep[e]:
                continue
            trial = hist.copy()
            trial[bins[e]] -= 1
            if trial.sum() == 0:
                continue
            value = distance(trial)
            if value < current - 1e-12:
                keep[e] = False
                hist = trial
                current = value
                dropped = True
    out = retrieved.subset(np.flatnonzero(keep))
    out.emd_before, out.emd_after = before, current
    return out


def build_extended_pool(oracle: SelectionResult, filtered: RetrievedSet) -> ExtendedPool:
    if oracle.labels is None:
        raise ValueError("oracle selection carries no labels")
    overlap = np.intersect1d(oracle.indices, filtered.indices)
    if len(overlap):
        raise ValueError(f"pseudo-labeled rows overlap the oracle selection: {overlap[:5].tolist()}")
    return ExtendedPool(
        np.concatenate([oracle.indices, filtered.indices]),
        np.concatenate([oracle.labels, filtered.labels]),
        np.array(["oracle"] * oracle.budget + ["generated"] * len(filtered), dtype=object),
    )


def calibrate_selection(pool: FeaturePool, labeled: SelectionResult, config: CalibrationConfig, keep_model=False):
    """Run the calibration chain on an oracle-labeled selection."""
    if labeled.labels is None:
        raise ValueError("selection must carry oracle labels")
    transformed = tukey_transform(pool, config.tukey_lambda)
    x = _rows(transformed)
    k = config.n_classes if config.n_classes is not None else int(labeled.labels.max()) + 1
    model = kmeans(x, k, seed=config.seed, max_iters=config.kmeans_iters, n_init=config.kmeans_restarts)
    model = assign_pseudo_labels(model, labeled.indices, labeled.labels, x)
    stats = class_statistics(x, model, labeled.indices, labeled.labels, config.trim_fraction)
    calibrated = calibrate_statistics(stats, config)
    labeled_counts = {y: s.labeled_count for y, s in stats.items()}
    generated = generate_features(calibrated, labeled_counts, config)
    retrieved = retrieve_real(generated, x, excluded=labeled.indices)
    if config.filter:
        filtered = emd_filter(retrieved, x, labeled.indices, model)
    else:
        filtered = retrieved.subset(np.arange(len(retrieved)))
        hist = cluster_histogram(model, np.concatenate([labeled.indices, retrieved.indices]))
        target = np.bincount(model.assign, minlength=model.k)
        filtered.emd_before = filtered.emd_after = emd(hist, target, centroid_ground(model.centroids))
    extended = build_extended_pool(labeled, filtered)
    extended.summary = {
        "beta": calibration_beta(config.alpha, config.ratio_r),
        "n_classes": k,
        "classes": {
            str(y): {
                "members": s.member_count,
                "labeled": s.labeled_count,
                "beta": calibrated[y].beta,
                "generated": int(len(generated.get(y, ()))),
                "retrieved": int((retrieved.labels == y).sum()),
                "kept": int((filtered.labels == y).sum()),
            }
            for y, s in stats.items()
        },
        "oracle": labeled.budget,
        "generated": int(sum(len(g) for g in generated.values())),
        "retrieved": len(retrieved),
        "kept": len(filtered),
        "emd_before": filtered.emd_before,
        "emd_after": filtered.emd_after,
    }
    if keep_model:
        return extended, model
    return extended


def run_activedc(pool: FeaturePool, oracle, selection_cfg, calibration_cfg: CalibrationConfig, selector: str = "parametric"):
    """Select, query the oracle, then calibrate.

    ``oracle`` maps an index array to its label array and is only ever asked
    about selected indices.
    """
    from .baselines import SELECTORS
    from .selection import select_parametric

    if selector == "parametric":
        selection = select_parametric(pool, selection_cfg)
    else:
        selection = SELECTORS[selector](pool, selection_cfg.budget, selection_cfg.seed)
    labeled = selection.with_labels(oracle(selection.indices))
    extended = calibrate_selection(pool, labeled, calibration_cfg)
    extended.summary["selection"] = selection.to_dict()
    return extended


def summary_json(extended: ExtendedPool) -> str:
    return json.dumps(extended.summary, indent=2, sort_keys=True)
