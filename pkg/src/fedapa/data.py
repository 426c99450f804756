"""Datasets, synthetic clustered benchmark, CSV ingestion and non-IID partitioning."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_DIRICHLET_RESAMPLES = 100
PATHOLOGICAL_FLOOR = 0.1
PATHOLOGICAL_ALPHA = 0.5


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        X = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        if X.ndim != 2:
            raise DataError("features must be an (N, input_dim) matrix")
        if len(X) != len(y):
            raise DataError(f"{len(X)} feature rows but {len(y)} labels")
        if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        if self.feature_names is not None and len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names length differs from feature width")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64)
        return self.features[idx], self.labels[idx]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        h.update(str(self.num_classes).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class PartitionResult:
    shards: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for m, shard in enumerate(self.shards):
            if not shard:
                raise DataError(f"shard {m} is empty")
            if seen.intersection(shard):
                raise DataError(f"shard {m} overlaps an earlier shard")
            seen.update(shard)

    @property
    def num_clients(self) -> int:
        return len(self.shards)

    def to_json(self) -> str:
        return json.dumps({str(m): list(s) for m, s in enumerate(self.shards)})

    @classmethod
    def from_json(cls, text: str) -> "PartitionResult":
        raw = json.loads(text)
        return cls(tuple(tuple(int(i) for i in raw[str(m)]) for m in range(len(raw))))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total`` that round ``quotas`` by largest remainder."""
    quotas = np.asarray(quotas, dtype=np.float64)
    scaled = quotas / quotas.sum() * total if quotas.sum() > 0 else np.zeros_like(quotas)
    counts = np.floor(scaled).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort keeps ties in index order
        order = np.argsort(-(scaled - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def make_clustered_synthetic(
    clusters: int,
    clients_per_cluster: int,
    classes: int,
    samples_per_client: int,
    input_dim: int,
    cluster_shift: float,
    seed: int,
    noise: float = 4.5,
    separation: float = 1.5,
) -> tuple[Dataset, list[int]]:
    """Gaussian class blobs whose labelling depends on the client's cluster.

    Cluster ``k`` moves the centre of class ``c`` towards the shared centre of
    class ``(c + k) mod classes``, so distinct clusters (up to ``classes`` of
    them) disagree on every label. ``cluster_shift`` is the interpolation
    weight: 0 makes all clusters identical, 1 gives pure relabelling. Samples
    are laid out client by client, ``samples_per_client`` rows each, with
    labels drawn uniformly.
    """
    for name, value in [
        ("clusters", clusters),
        ("clients_per_cluster", clients_per_cluster),
        ("classes", classes),
        ("samples_per_client", samples_per_client),
        ("input_dim", input_dim),
    ]:
        if value < 1:
            raise DataError(f"{name} must be positive, got {value}")
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(classes, input_dim)) * separation
    means = np.empty((clusters, classes, input_dim))
    for k in range(clusters):
        perm = np.roll(np.arange(classes), -k)
        means[k] = base + cluster_shift * (base[perm] - base)

    assignment = [k for k in range(clusters) for _ in range(clients_per_cluster)]
    feats, labels = [], []
    for k in assignment:
        y = rng.integers(0, classes, size=samples_per_client)
        x = means[k][y] + noise * rng.normal(size=(samples_per_client, input_dim))
        feats.append(x)
        labels.append(y)
    return Dataset(np.concatenate(feats), np.concatenate(labels), classes), assignment


def contiguous_partition(num_clients: int, samples_per_client: int) -> PartitionResult:
    """Shards matching the client-by-client layout of ``make_clustered_synthetic``."""
    return PartitionResult(
        tuple(
            tuple(range(m * samples_per_client, (m + 1) * samples_per_client))
            for m in range(num_clients)
        )
    )


def _dirichlet(rng: np.random.Generator, alpha: float, size: int) -> np.ndarray:
    while True:
        p = rng.dirichlet(np.full(size, alpha))
        if np.isfinite(p).all() and p.sum() > 0:
            return p


def partition_dirichlet(
    ds: Dataset, num_clients: int, alpha: float, seed: int, min_size: int = 1
) -> PartitionResult:
    """Per-class Dir(alpha) allocation; every shard ends with at least ``min_size`` samples."""
    if alpha <= 0:
        raise DataError(f"Dirichlet concentration must be positive, got {alpha}")
    if num_clients < 1:
        raise DataError("need at least one client")
    if len(ds) < num_clients * min_size:
        raise DataError(f"{len(ds)} samples cannot give {num_clients} shards {min_size} each")
    rng = np.random.default_rng(seed)
    by_class = [rng.permutation(np.flatnonzero(ds.labels == c)) for c in range(ds.num_classes)]

    for _ in range(MAX_DIRICHLET_RESAMPLES):
        counts = np.stack(
            [largest_remainder(_dirichlet(rng, alpha, num_clients), len(idx)) for idx in by_class]
        )
        if (counts.sum(axis=0) >= min_size).all():
            break

    shards: list[list[int]] = [[] for _ in range(num_clients)]
    for c, idx in enumerate(by_class):
        offset = 0
        for m in range(num_clients):
            shards[m].extend(idx[offset : offset + counts[c, m]].tolist())
            offset += counts[c, m]

    # clients still short take samples one at a time from the largest shard
    for m in range(num_clients):
        while len(shards[m]) < min_size:
            donor = max(range(num_clients), key=lambda j: (len(shards[j]), -j))
            shards[m].append(shards[donor].pop())
    return PartitionResult(tuple(tuple(sorted(s)) for s in shards))


def partition_pathological(
    ds: Dataset, num_clients: int, classes_per_client: int, seed: int
) -> PartitionResult:
    C = ds.num_classes
    if not 1 <= classes_per_client <= C:
        raise DataError(f"classes_per_client must lie in [1, {C}], got {classes_per_client}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(C)
    owned = [
        [int(order[(m * classes_per_client + k) % C]) for k in range(classes_per_client)]
        for m in range(num_clients)
    ]
    holders: dict[int, list[int]] = {c: [] for c in range(C)}
    for m, cls in enumerate(owned):
        for c in cls:
            holders[c].append(m)

    shards: list[list[int]] = [[] for _ in range(num_clients)]
    for c in range(C):
        members = holders[c]
        if not members:
            continue
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        h = len(members)
        if h > len(idx):
            raise DataError(f"class {c} has {len(idx)} samples but {h} holders")
        floor = min(PATHOLOGICAL_FLOOR, 1.0 / h)
        props = floor + (1.0 - floor * h) * _dirichlet(rng, PATHOLOGICAL_ALPHA, h)
        counts = largest_remainder(props, len(idx))
        offset = 0
        for m, n in zip(members, counts):
            shards[m].extend(idx[offset : offset + n].tolist())
            offset += n
    for m, shard in enumerate(shards):
        if not shard:
            raise DataError(f"client {m} received no samples; its classes are empty")
    return PartitionResult(tuple(tuple(sorted(s)) for s in shards))


def split_train_test(
    shard: Sequence[int], labels: np.ndarray, train_fraction: float, seed: int
) -> tuple[list[int], list[int]]:
    """Seeded train/test split of one shard, stratified by class when possible."""
    if not 0 < train_fraction < 1:
        raise DataError(f"train fraction must lie in (0, 1), got {train_fraction}")
    shard = np.asarray(shard, dtype=np.int64)
    n = len(shard)
    if n < 2:
        raise DataError(f"cannot split a shard of size {n}")
    rng = np.random.default_rng(seed)
    n_train = min(max(math.floor(train_fraction * n + 0.5), 1), n - 1)

    shard_labels = labels[shard]
    classes, class_counts = np.unique(shard_labels, return_counts=True)
    if class_counts.min() >= 2:
        per_class = largest_remainder(class_counts.astype(np.float64), n_train)
        train, test = [], []
        for c, k in zip(classes, per_class):
            members = rng.permutation(shard[shard_labels == c])
            train.extend(members[:k].tolist())
            test.extend(members[k:].tolist())
    else:
        perm = rng.permutation(shard)
        train, test = perm[:n_train].tolist(), perm[n_train:].tolist()
    return sorted(train), sorted(test)


def load_csv(path: str | Path) -> Dataset:
    """Read a header row plus float feature columns and a final integer ``label`` column."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[-1].strip() != "label":
            raise DataError(f"{path}: last column must be named 'label'")
        width = len(header) - 1
        if width < 1:
            raise DataError(f"{path}: no feature columns")
        feats, labels = [], []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1:
                raise DataError(f"{path}: row {row_no} has {len(row)} fields, expected {width + 1}")
            try:
                feats.append([float(v) for v in row[:-1]])
            except ValueError:
                raise DataError(f"{path}: row {row_no} has a non-numeric feature") from None
            try:
                labels.append(int(row[-1]))
            except ValueError:
                raise DataError(f"{path}: row {row_no} has non-integer label {row[-1]!r}") from None
            if labels[-1] < 0:
                raise DataError(f"{path}: row {row_no} has negative label")
    if not labels:
        raise DataError(f"{path}: no data rows")
    return Dataset(
        np.array(feats), np.array(labels), max(labels) + 1, tuple(h.strip() for h in header[:-1])
    )


def write_csv(ds: Dataset, path: str | Path) -> None:
    names = list(ds.feature_names or (f"x{k}" for k in range(ds.input_dim)))
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*names, "label"])
        for x, y in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])
