"""Feature pool and label file I/O.

The row index of a pool is the sample id used everywhere downstream; nothing
here ever reorders rows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"ADCF"
VERSION = 1
_HEADER = struct.Struct("<4sIQII")  # magic, version, N, d, flags
FLAG_NORMALIZED = 1
NORM_TOL = 1e-5


class FeatureFormatError(ValueError):
    """Raised when a feature or label file cannot be parsed."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class FeaturePool:
    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"pool data must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1:
            raise ValueError("empty pool")
        if data.shape[1] < 1:
            raise ValueError("pool dimension must be >= 1")
        finite = np.isfinite(data).all(axis=1)
        if not finite.all():
            raise FeatureFormatError("non-finite value", row=int(np.argmin(finite)))
        if self.normalized:
            norms = np.linalg.norm(data.astype(np.float64), axis=1)
            bad = np.abs(norms - 1.0) > NORM_TOL
            if bad.any():
                raise ValueError(f"row {int(np.argmax(bad))} is not unit norm")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def as_float64(self) -> np.ndarray:
        return self.data.astype(np.float64)


@dataclass(frozen=True)
class LabelFile:
    indices: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if indices.shape != labels.shape:
            raise ValueError("indices and labels differ in length")
        if (indices < 0).any():
            raise ValueError("negative sample index")
        if (labels < 0).any():
            raise ValueError("negative class label")
        uniq, counts = np.unique(indices, return_counts=True)
        if (counts > 1).any():
            raise ValueError(f"duplicate index {int(uniq[np.argmax(counts > 1)])}")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "labels", labels)

    @property
    def entries(self) -> list[tuple[int, int]]:
        return list(zip(self.indices.tolist(), self.labels.tolist()))

    def check_against(self, pool: FeaturePool) -> None:
        if len(self.indices) and self.indices.max() >= pool.count:
            raise ValueError(
                f"label index {int(self.indices.max())} out of range for pool of {pool.count}"
            )

    def dense(self, n: int) -> np.ndarray:
        """Labels as a length-n array, -1 where unlabeled."""
        out = np.full(n, -1, dtype=np.int64)
        out[self.indices] = self.labels
        return out

    def lookup(self, indices) -> np.ndarray:
        mapping = dict(zip(self.indices.tolist(), self.labels.tolist()))
        try:
            return np.array([mapping[int(i)] for i in indices], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"no label for index {exc.args[0]}") from None


def l2_normalize(pool: FeaturePool) -> FeaturePool:
    data = pool.as_float64()
    norms = np.linalg.norm(data, axis=1)
    zero = norms == 0
    if zero.any():
        raise ValueError(f"row {int(np.argmax(zero))} has zero norm")
    # stays float64: a float32 cast would leave norms ~1e-7 off
    return FeaturePool(data / norms[:, None], normalized=True)


def load_features(path, format: str | None = None) -> FeaturePool:
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() in (".csv", ".txt") else "binary"
    if format == "binary":
        return _load_binary(path)
    if format == "csv":
        return _load_csv(path)
    raise ValueError(f"unknown feature format {format!r}")


def _load_binary(path: Path) -> FeaturePool:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureFormatError("truncated header")
    magic, version, n, d, flags = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FeatureFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FeatureFormatError(f"unsupported version {version}")
    if n == 0:
        raise FeatureFormatError("empty pool")
    if d == 0:
        raise FeatureFormatError("zero dimension")
    expected = n * d * 4
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise FeatureFormatError(
            f"payload has {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float32)
    finite = np.isfinite(data).all(axis=1)
    if not finite.all():
        raise FeatureFormatError("NaN/Inf payload", row=int(np.argmin(finite)))
    normalized = bool(flags & FLAG_NORMALIZED)
    if normalized:
        norms = np.linalg.norm(data.astype(np.float64), axis=1)
        bad = np.abs(norms - 1.0) > NORM_TOL
        if bad.any():
            raise FeatureFormatError("flagged normalized but not unit norm", row=int(np.argmax(bad)))
    return FeaturePool(data, normalized=normalized)


def _load_csv(path: Path) -> FeaturePool:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError:
                raise FeatureFormatError("unparseable number", row=len(rows)) from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FeatureFormatError(
                    f"expected {width} columns, got {len(row)}", row=len(rows)
                )
            if not all(np.isfinite(row)):
                raise FeatureFormatError("NaN/Inf value", row=len(rows))
            rows.append(row)
    if not rows:
        raise FeatureFormatError("empty pool")
    return FeaturePool(np.array(rows, dtype=np.float32), normalized=False)


def save_features(pool: FeaturePool, path, format: str = "binary") -> None:
    path = Path(path)
    data = np.ascontiguousarray(pool.data, dtype="<f4")
    if format == "csv":
        with open(path, "w") as fh:
            for row in data:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
        return
    if format != "binary":
        raise ValueError(f"unknown feature format {format!r}")
    normalized = pool.normalized
    if normalized:
        # the flag must survive the float32 cast
        norms = np.linalg.norm(data.astype(np.float64), axis=1)
        normalized = bool((np.abs(norms - 1.0) <= NORM_TOL).all())
    flags = FLAG_NORMALIZED if normalized else 0
    header = _HEADER.pack(MAGIC, VERSION, pool.count, pool.dim, flags)
    path.write_bytes(header + data.tobytes())


def load_labels(path) -> LabelFile:
    indices, labels = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise FeatureFormatError("expected 'index,label'", row=lineno)
            try:
                indices.append(int(parts[0]))
                labels.append(int(parts[1]))
            except ValueError:
                raise FeatureFormatError("non-integer field", row=lineno) from None
    return LabelFile(np.array(indices, dtype=np.int64), np.array(labels, dtype=np.int64))


def save_labels(labels: LabelFile, path) -> None:
    with open(path, "w") as fh:
        for i, y in labels.entries:
            fh.write(f"{i},{y}\n")
