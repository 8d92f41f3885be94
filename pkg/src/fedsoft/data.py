"""Datasets, client partitions, and public distillation pools.

Synthetic data comes from isotropic Gaussian blobs with seeded class
means, which keeps every experiment reproducible from a handful of
integers.  Real data can be read from IDX image/label pairs or from a
plain CSV.  Client splits follow the Dirichlet recipe: each client draws
a class mixture p ~ Dir(alpha), then fills its quota by sampling classes
from p and taking concrete examples from per-class pools.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, PartitionError, ShapeError, ValidationError

SELECTION_STRATEGIES = ("random", "entropy", "certainty", "margin")


@dataclass
class Dataset:
    """Feature matrix (n, d) with integer labels in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: str = "memory"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError("features must be 2-d")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError("labels must be 1-d with one entry per feature row")
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError("labels out of range for num_classes")

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.num_classes, self.provenance)


@dataclass(frozen=True)
class PartitionSpec:
    """Dirichlet split parameters; smaller alpha means more skew."""

    num_clients: int
    alpha: float
    seed: int = 0
    equal_sizes: bool = True

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValidationError("num_clients must be >= 1")
        if not (self.alpha > 0.0 and np.isfinite(self.alpha)):
            raise ValidationError("alpha must be positive and finite")


@dataclass
class PublicPool:
    """Unlabeled feature pool plus the currently selected subset."""

    features: np.ndarray
    selected_indices: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.selected_indices = np.asarray(self.selected_indices, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError("pool features must be 2-d")
        if self.selected_indices.ndim != 1:
            raise ShapeError("selected_indices must be 1-d")
        if self.selected_indices.size:
            if self.selected_indices.min() < 0 or self.selected_indices.max() >= self.features.shape[0]:
                raise ValidationError("selected_indices out of range")
            if np.unique(self.selected_indices).size != self.selected_indices.size:
                raise ValidationError("selected_indices contains duplicates")

    @property
    def selected_features(self) -> np.ndarray:
        return self.features[self.selected_indices]


def blob_means(num_classes: int, dim: int, seed: int = 0) -> np.ndarray:
    """The N(0, I) class means a blob dataset with this seed is built on."""
    if num_classes < 2:
        raise ValidationError("num_classes must be >= 2")
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    return np.random.default_rng(seed).normal(size=(num_classes, dim))


def _sample_around(
    means: np.ndarray, samples_per_class: int, spread: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    num_classes, dim = means.shape
    features = np.empty((num_classes * samples_per_class, dim))
    labels = np.empty(num_classes * samples_per_class, dtype=np.int64)
    for c in range(num_classes):
        block = slice(c * samples_per_class, (c + 1) * samples_per_class)
        features[block] = means[c] + spread * rng.normal(size=(samples_per_class, dim))
        labels[block] = c
    # Interleave classes so index order carries no label signal.
    order = rng.permutation(features.shape[0])
    return features[order], labels[order]


def make_blobs(
    num_classes: int,
    dim: int,
    samples_per_class: int,
    spread: float,
    seed: int = 0,
) -> Dataset:
    """Isotropic Gaussian blobs around seeded N(0, I) class means.

    Means are drawn first, so datasets and pools built from the same seed
    share class geometry.
    """
    if num_classes < 2:
        raise ValidationError("num_classes must be >= 2")
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    if samples_per_class < 1:
        raise ValidationError("samples_per_class must be >= 1")
    if not (spread > 0.0 and np.isfinite(spread)):
        raise ValidationError("spread must be positive and finite")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(num_classes, dim))
    features, labels = _sample_around(means, samples_per_class, spread, rng)
    return Dataset(features, labels, num_classes, provenance=f"blobs(seed={seed})")


def sample_blobs(
    means: np.ndarray,
    samples_per_class: int,
    spread: float,
    seed: int = 0,
    offset: np.ndarray | None = None,
) -> Dataset:
    """Fresh samples around given (optionally shifted) class means.

    Used for public pools: geometry comes from ``blob_means`` of the
    training seed, samples from an independent seed.
    """
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2 or means.shape[0] < 2:
        raise ShapeError("means must be 2-d with at least two rows")
    if samples_per_class < 1:
        raise ValidationError("samples_per_class must be >= 1")
    if not (spread > 0.0 and np.isfinite(spread)):
        raise ValidationError("spread must be positive and finite")
    if offset is not None:
        offset = np.asarray(offset, dtype=np.float64)
        if offset.shape != (means.shape[1],):
            raise ShapeError("offset must be a vector of the feature dimension")
        means = means + offset
    rng = np.random.default_rng(seed)
    features, labels = _sample_around(means, samples_per_class, spread, rng)
    return Dataset(features, labels, means.shape[0], provenance=f"blobs(pool seed={seed})")


def _read_idx(path: str, want_dims: int) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header at offset 0")
    zero1, zero2, dtype_code, ndim = struct.unpack(">BBBB", raw[:4])
    if zero1 != 0 or zero2 != 0:
        raise FormatError(f"{path}: bad IDX magic at offset 0")
    if dtype_code != 0x08:
        raise FormatError(f"{path}: unsupported IDX dtype 0x{dtype_code:02x} at offset 2")
    if ndim != want_dims:
        raise FormatError(f"{path}: expected {want_dims}-d IDX, got {ndim}-d at offset 3")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated IDX dimension table at offset 4")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    count = int(np.prod(dims))
    if len(raw) != header_len + count:
        raise FormatError(
            f"{path}: payload length {len(raw) - header_len} does not match dims {dims}"
            f" at offset {header_len}"
        )
    data = np.frombuffer(raw, dtype=np.uint8, offset=header_len)
    return data.reshape(dims)


def load_idx_images(images_path: str) -> np.ndarray:
    """IDX3 images flattened to (n, rows*cols) float features in [0, 1]."""
    images = _read_idx(images_path, want_dims=3)
    return images.reshape(images.shape[0], -1).astype(np.float64) / 255.0


def load_idx(images_path: str, labels_path: str, num_classes: int | None = None) -> Dataset:
    """IDX3 images + IDX1 labels; pixels are scaled into [0, 1]."""
    images = _read_idx(images_path, want_dims=3)
    labels = _read_idx(labels_path, want_dims=1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 2
    return Dataset(features, labels, num_classes, provenance=images_path)


def load_csv(path: str, num_classes: int | None = None) -> Dataset:
    """CSV with feature columns followed by one integer label column."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if lineno == 1 and any(_not_a_number(p) for p in parts):
                continue  # header row
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: no data rows")
    width = len(rows[0])
    if width < 2:
        raise FormatError(f"{path}: need at least one feature column and a label column")
    if any(len(r) != width for r in rows):
        raise FormatError(f"{path}: ragged rows (expected {width} columns)")
    arr = np.asarray(rows, dtype=np.float64)
    raw_labels = arr[:, -1]
    labels = raw_labels.astype(np.int64)
    if np.any(labels != raw_labels):
        raise FormatError(f"{path}: label column contains non-integer values")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return Dataset(arr[:, :-1], labels, num_classes, provenance=path)


def _not_a_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return True
    return False


def dirichlet_partition(data: Dataset, spec: PartitionSpec) -> list[np.ndarray]:
    """Split ``data`` into disjoint per-client index arrays.

    Each client draws p ~ Dir(alpha * 1) and fills a quota of
    floor(n / num_clients) samples by drawing classes from p and taking
    unused examples from that class's pool.  With ``equal_sizes`` an
    exhausted class is substituted by the class with the most remaining
    examples (ties to the lowest class id); otherwise the draw is
    skipped and the client ends up short.  Leftover examples after all
    quotas are filled stay unassigned.
    """
    n = data.n
    quota = n // spec.num_clients
    if quota < 1:
        raise PartitionError(
            f"{n} samples cannot give {spec.num_clients} clients one each; "
            "retry with fewer clients or more data"
        )
    rng = np.random.default_rng(spec.seed)
    c = data.num_classes

    pools = []
    remaining = np.zeros(c, dtype=np.int64)
    for cls in range(c):
        idx = np.flatnonzero(data.labels == cls)
        pools.append(rng.permutation(idx))
        remaining[cls] = idx.size

    cursors = np.zeros(c, dtype=np.int64)
    parts: list[np.ndarray] = []
    for _ in range(spec.num_clients):
        mixture = rng.dirichlet(np.full(c, spec.alpha))
        if not np.all(np.isfinite(mixture)):
            # Gamma draws can underflow to all-zero for tiny alpha.
            mixture = np.zeros(c)
            mixture[rng.integers(c)] = 1.0
        draws = rng.choice(c, size=quota, p=mixture)
        taken = []
        for cls in draws:
            if remaining[cls] == 0:
                if not spec.equal_sizes:
                    continue
                if remaining.max() == 0:
                    raise PartitionError(
                        "all class pools exhausted before quotas were met; "
                        "retry with a different seed, fewer clients, or more data"
                    )
                cls = int(np.argmax(remaining))
            taken.append(pools[cls][cursors[cls]])
            cursors[cls] += 1
            remaining[cls] -= 1
        parts.append(np.sort(np.asarray(taken, dtype=np.int64)))
    return parts


def partition_class_shares(data: Dataset, partition: list[np.ndarray]) -> np.ndarray:
    """Per-client class proportions, shape (num_clients, num_classes)."""
    shares = np.zeros((len(partition), data.num_classes))
    for i, idx in enumerate(partition):
        if idx.size == 0:
            continue
        counts = np.bincount(data.labels[idx], minlength=data.num_classes)
        shares[i] = counts / idx.size
    return shares


def export_partition_jsonl(partition: list[np.ndarray], path: str) -> None:
    """One JSON object per client: {"client": i, "indices": [...]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, idx in enumerate(partition):
            fh.write(json.dumps({"client": i, "indices": [int(v) for v in idx]}) + "\n")


def select_random(pool: PublicPool, n: int, seed: int = 0) -> np.ndarray:
    """Uniform subset of pool rows without replacement, sorted ascending."""
    m = pool.features.shape[0]
    if not (0 <= n <= m):
        raise ValidationError(f"cannot select {n} rows from a pool of {m}")
    if n == 0:
        return np.empty(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(m, size=n, replace=False).astype(np.int64))


def selection_scores(predictions: np.ndarray, strategy: str) -> np.ndarray:
    """Higher score means more informative under the given strategy."""
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.ndim != 2:
        raise ShapeError("predictions must be 2-d")
    if strategy == "entropy":
        p = np.maximum(predictions, 1e-12)
        return -np.sum(predictions * np.log2(p), axis=1)
    if strategy == "certainty":
        return -predictions.max(axis=1)
    if strategy == "margin":
        top2 = np.partition(predictions, -2, axis=1)[:, -2:]
        return top2[:, 0] - top2[:, 1]  # second-best minus best, <= 0
    raise ValidationError(f"unknown selection strategy {strategy!r}")


def select_active(pool: PublicPool, n: int, predictions: np.ndarray, strategy: str) -> np.ndarray:
    """Top-n pool rows by informativeness score; ties go to lower indices."""
    m = pool.features.shape[0]
    if not (1 <= n <= m):
        raise ValidationError(f"cannot select {n} rows from a pool of {m}")
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.shape[0] != m:
        raise ShapeError("need one prediction row per pool row")
    scores = selection_scores(predictions, strategy)
    order = np.lexsort((np.arange(m), -scores))
    return np.sort(order[:n].astype(np.int64))
