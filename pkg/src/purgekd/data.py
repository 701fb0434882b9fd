"""Datasets, hierarchical shard/chunk/slice partitioning, and flat-file ingestion.

Partition coordinates are 1-based throughout: shard k in 1..N, chunk l in
1..c_k, slice j in 1..R_{k,l}.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NotFoundError, ParseError, PartitionError


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a Gaussian-blob classification dataset."""

    num_classes: int
    points_per_class: int
    feature_dim: int
    class_center_spread: float = 3.0
    within_class_stddev: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.points_per_class < 1 or self.feature_dim < 1:
            raise ValueError("points_per_class and feature_dim must be positive")
        if self.class_center_spread <= 0 or self.within_class_stddev <= 0:
            raise ValueError("class_center_spread and within_class_stddev must be positive")


class Dataset:
    """Ordered classification points with stable integer ids.

    Ids are never reused; removing a point from a partition does not free its
    id for new points.
    """

    def __init__(self, ids, features, labels, num_classes):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DimensionError("features must be a 2-d array")
        if not (len(self.ids) == len(self.features) == len(self.labels)):
            raise ValueError("ids, features and labels must have equal length")
        if len(set(self.ids.tolist())) != len(self.ids):
            raise ValueError("point ids must be unique")
        if num_classes < 1:
            raise ValueError("num_classes must be positive")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        self.num_classes = int(num_classes)
        self._row = {int(p): i for i, p in enumerate(self.ids)}

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, point_id) -> bool:
        return int(point_id) in self._row

    def rows_for(self, point_ids) -> np.ndarray:
        try:
            rows = [self._row[int(p)] for p in point_ids]
        except KeyError as exc:
            raise NotFoundError(f"unknown point id {exc.args[0]}") from None
        return np.asarray(rows, dtype=np.intp)

    def features_for(self, point_ids) -> np.ndarray:
        return self.features[self.rows_for(point_ids)]

    def labels_for(self, point_ids) -> np.ndarray:
        return self.labels[self.rows_for(point_ids)]


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic Gaussian-blob dataset: one cluster per class, ids 0..n-1."""
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(0.0, spec.class_center_spread,
                         size=(spec.num_classes, spec.feature_dim))
    feats = []
    labels = []
    for c in range(spec.num_classes):
        pts = centers[c] + rng.normal(0.0, spec.within_class_stddev,
                                      size=(spec.points_per_class, spec.feature_dim))
        feats.append(pts)
        labels.append(np.full(spec.points_per_class, c, dtype=np.int64))
    n = spec.num_classes * spec.points_per_class
    return Dataset(np.arange(n), np.vstack(feats), np.concatenate(labels), spec.num_classes)


def load_csv(path, has_header: bool = False) -> Dataset:
    """Read ``id,label,f1,...,fd`` rows into a Dataset.

    num_classes is 1 + max(label), so gaps in the label range are preserved.
    """
    ids, labels, feats = [], [], []
    dim = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if has_header and lineno == 1:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise ParseError(f"{path}: line {lineno}: expected id,label,f1,...")
            try:
                pid = int(row[0])
                label = int(row[1])
                vec = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            if label < 0:
                raise ParseError(f"{path}: line {lineno}: negative label {label}")
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DimensionError(
                    f"{path}: line {lineno}: expected {dim} features, got {len(vec)}")
            ids.append(pid)
            labels.append(label)
            feats.append(vec)
    if not ids:
        raise ParseError(f"{path}: no data rows")
    return Dataset(np.asarray(ids), np.asarray(feats), np.asarray(labels), max(labels) + 1)


def write_csv(dataset: Dataset, path) -> None:
    """Write a dataset in the load_csv format, losslessly (repr floats)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for i in range(len(dataset)):
            writer.writerow([int(dataset.ids[i]), int(dataset.labels[i])]
                            + [repr(float(v)) for v in dataset.features[i]])


def even_split_sizes(n: int, groups: int) -> list[int]:
    """Group sizes differing by at most one, remainder going to the lowest indices."""
    if groups < 1:
        raise PartitionError(f"need at least one group, got {groups}")
    if n < groups:
        raise PartitionError(f"cannot split {n} points into {groups} non-empty groups")
    q, rem = divmod(n, groups)
    return [q + 1 if i < rem else q for i in range(groups)]


def _split(seq, sizes):
    out = []
    pos = 0
    for s in sizes:
        out.append(seq[pos:pos + s])
        pos += s
    return out


class PartitionPlan:
    """Shard -> chunk -> slice hierarchy over point ids.

    Built once from a seeded uniform permutation; afterwards mutated only by
    remove_point (single writer). Group sizes at every level differ by at
    most one at construction time.
    """

    def __init__(self, slices, seed):
        # slices[k-1][l-1][j-1] is the ordered id list of slice (k, l, j)
        self._slices = [[[list(map(int, sl)) for sl in chunk] for chunk in shard]
                        for shard in slices]
        self.seed = seed
        self._loc = {}
        for k, shard in enumerate(self._slices, start=1):
            for l, chunk in enumerate(shard, start=1):
                for j, sl in enumerate(chunk, start=1):
                    for pid in sl:
                        self._loc[pid] = (k, l, j)

    @property
    def num_shards(self) -> int:
        return len(self._slices)

    def chunks_in_shard(self, k: int) -> int:
        return len(self._slices[k - 1])

    def slices_in_chunk(self, k: int, l: int) -> int:
        return len(self._slices[k - 1][l - 1])

    def total_slices_in_shard(self, k: int) -> int:
        return sum(len(chunk) for chunk in self._slices[k - 1])

    def slice_ids(self, k: int, l: int, j: int) -> list[int]:
        return list(self._slices[k - 1][l - 1][j - 1])

    def chunk_ids(self, k: int, l: int) -> list[int]:
        return [p for sl in self._slices[k - 1][l - 1] for p in sl]

    def shard_ids(self, k: int) -> list[int]:
        return [p for ch in self._slices[k - 1] for sl in ch for p in sl]

    def all_ids(self) -> list[int]:
        return [p for k in range(1, self.num_shards + 1) for p in self.shard_ids(k)]

    def __contains__(self, point_id) -> bool:
        return int(point_id) in self._loc

    def __len__(self) -> int:
        return len(self._loc)

    def locate(self, point_id) -> tuple[int, int, int]:
        try:
            return self._loc[int(point_id)]
        except KeyError:
            raise NotFoundError(f"point {point_id} is not in the partition") from None

    def remove(self, point_id) -> None:
        k, l, j = self.locate(point_id)
        self._slices[k - 1][l - 1][j - 1].remove(int(point_id))
        del self._loc[int(point_id)]

    def copy(self) -> "PartitionPlan":
        return PartitionPlan(self._slices, self.seed)

    def raw_slices(self):
        """Nested id lists (copy), suitable for serialization."""
        return [[[list(sl) for sl in chunk] for chunk in shard] for shard in self._slices]


def make_partition(dataset: Dataset, num_shards: int, chunks_per_shard,
                   slices_per_chunk, seed: int) -> PartitionPlan:
    """Seeded uniform random split of the dataset ids into shards, chunks and slices.

    chunks_per_shard gives c_k per shard; slices_per_chunk gives R_{k,l} per
    chunk, as a nested sequence aligned with chunks_per_shard. A plain int
    for either broadcasts to every shard (and every chunk).
    """
    if isinstance(chunks_per_shard, int):
        chunks_per_shard = [chunks_per_shard] * num_shards
    if isinstance(slices_per_chunk, int):
        slices_per_chunk = [[slices_per_chunk] * c for c in chunks_per_shard]
    if len(chunks_per_shard) != num_shards:
        raise PartitionError("chunks_per_shard must list one count per shard")
    if len(slices_per_chunk) != num_shards:
        raise PartitionError("slices_per_chunk must list one sequence per shard")
    for k in range(num_shards):
        if chunks_per_shard[k] < 1:
            raise PartitionError(f"shard {k + 1}: chunk count must be >= 1")
        if len(slices_per_chunk[k]) != chunks_per_shard[k]:
            raise PartitionError(f"shard {k + 1}: need one slice count per chunk")
        if any(r < 1 for r in slices_per_chunk[k]):
            raise PartitionError(f"shard {k + 1}: slice counts must be >= 1")

    perm = [int(p) for p in np.random.default_rng(seed).permutation(dataset.ids)]
    shards = _split(perm, even_split_sizes(len(perm), num_shards))
    nested = []
    for k in range(num_shards):
        chunks = _split(shards[k], even_split_sizes(len(shards[k]), chunks_per_shard[k]))
        shard_slices = []
        for l in range(chunks_per_shard[k]):
            r = slices_per_chunk[k][l]
            shard_slices.append(_split(chunks[l], even_split_sizes(len(chunks[l]), r)))
        nested.append(shard_slices)
    return PartitionPlan(nested, seed)


def locate_point(plan: PartitionPlan, point_id) -> tuple[int, int, int]:
    """(shard, chunk, slice) of a point, or NotFoundError after removal."""
    return plan.locate(point_id)


def remove_point(plan: PartitionPlan, point_id) -> PartitionPlan:
    """Delete one point from its slice, in place; returns the plan."""
    plan.remove(point_id)
    return plan
