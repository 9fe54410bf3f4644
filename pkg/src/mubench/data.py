"""Dataset ingestion, the synthetic generator, and slice/batch planning."""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlreadyRevoked,
    CsvParseError,
    EmptyDatasetError,
    InvalidArgument,
    LabelDomainError,
    NotFound,
)

F32 = np.float32


@dataclass
class Dataset:
    """Binary-labeled numeric dataset with dense ids 0..n-1 in row order."""

    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=F32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64).ravel()
        if self.features.ndim != 2:
            raise InvalidArgument("features must be a 2-D matrix")
        if self.features.shape[0] != self.labels.size:
            raise InvalidArgument("features and labels must have equal row counts")
        if self.labels.size == 0:
            raise EmptyDatasetError(f"{self.name}: dataset has no rows")
        bad = ~np.isin(self.labels, (0, 1))
        if bad.any():
            raise LabelDomainError(
                f"{self.name}: labels must be 0 or 1, found {self.labels[bad][0]}"
            )

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, ids, name: str | None = None) -> "Dataset":
        """New dataset from the given rows, re-indexed to dense ids."""
        idx = np.asarray(ids, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], name or f"{self.name}-subset")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


def load_csv(path, label_column: str = "label") -> Dataset:
    """Load a numeric, header-bearing CSV whose label column holds 0/1.

    Error naming counts data rows from 1 (the header is row 0).
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CsvParseError(f"{path}: empty file, expected a header row")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise CsvParseError(f"{path}: no column named {label_column!r} in header")
        label_idx = header.index(label_column)

        feat_rows: list[list[float]] = []
        labels: list[int] = []
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvParseError(
                    f"{path}: row {rownum} has {len(row)} cells, header has {len(header)}"
                )
            feats = []
            for col, cell in enumerate(row):
                if col == label_idx:
                    continue
                try:
                    feats.append(float(cell))
                except ValueError:
                    raise CsvParseError(
                        f"{path}: row {rownum}, column {header[col]!r}: "
                        f"cell {cell.strip()!r} is not numeric"
                    ) from None
            raw = row[label_idx].strip()
            if raw not in ("0", "1"):
                raise LabelDomainError(
                    f"{path}: row {rownum}: label must be 0 or 1, got {raw!r}"
                )
            feat_rows.append(feats)
            labels.append(int(raw))

    if not labels:
        raise EmptyDatasetError(f"{path}: no data rows")
    return Dataset(
        np.asarray(feat_rows, dtype=F32),
        np.asarray(labels, dtype=np.int64),
        name=os.path.basename(str(path)),
    )


def save_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    """Write a dataset in the same CSV format load_csv accepts."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.feature_dim)] + [label_column])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(x)) for x in row] + [int(label)])


NOISE_SCALE = 0.15  # label noise relative to the unit-variance teacher margin


def gen_synthetic(n: int, dim: int, seed: int) -> Dataset:
    """Noisy-linear synthetic dataset: label = (w.x / sqrt(dim) + noise > 0).

    Deterministic in (n, dim, seed); class balance concentrates near 50/50.
    """
    if n < 2:
        raise InvalidArgument(f"n must be >= 2, got {n}")
    if dim < 1:
        raise InvalidArgument(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    teacher = rng.standard_normal(dim)
    feats = rng.standard_normal((n, dim))
    margin = feats @ teacher / np.sqrt(dim) + NOISE_SCALE * rng.standard_normal(n)
    labels = (margin > 0).astype(np.int64)
    return Dataset(feats.astype(F32), labels, name=f"synthetic-n{n}-d{dim}-s{seed}")


def split_ids(n: int, eval_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (train_ids, eval_ids) partition of range(n), both sorted."""
    if not 0.0 < eval_fraction < 1.0:
        raise InvalidArgument("eval_fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_eval = max(1, int(round(n * eval_fraction)))
    if n_eval >= n:
        raise InvalidArgument("eval_fraction leaves no training rows")
    return np.sort(perm[n_eval:]), np.sort(perm[:n_eval])


def split_dataset(dataset: Dataset, eval_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic train/eval split; both halves get fresh dense ids."""
    train_ids, eval_ids = split_ids(dataset.n, eval_fraction, seed)
    return (
        dataset.subset(train_ids, f"{dataset.name}-train"),
        dataset.subset(eval_ids, f"{dataset.name}-eval"),
    )


def _chunk(ids: np.ndarray, size: int) -> tuple[tuple[int, ...], ...]:
    return tuple(
        tuple(int(x) for x in ids[k : k + size]) for k in range(0, len(ids), size)
    )


@dataclass(frozen=True)
class SlicePlan:
    """Immutable partition of sample ids into ordered slices of batches.

    ``tombstone`` returns a new plan sharing every untouched slice, so
    concurrent readers of older snapshots stay valid.
    """

    num_slices: int
    batch_size: int
    shuffle_seed: int
    slices: tuple[tuple[tuple[int, ...], ...], ...]
    tombstones: frozenset[int] = frozenset()
    _locations: dict = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        loc = {}
        for i, batches in enumerate(self.slices, start=1):
            for j, ids in enumerate(batches, start=1):
                for sid in ids:
                    loc[sid] = (i, j)
        self._locations.update(loc)

    def locate(self, sample_id: int) -> tuple[int, int]:
        """1-based (slice, batch) position of a live sample id."""
        sample_id = int(sample_id)
        if sample_id in self.tombstones:
            raise AlreadyRevoked(f"sample {sample_id} was already revoked")
        pos = self._locations.get(sample_id)
        if pos is None:
            raise NotFound(f"sample {sample_id} is not in the plan")
        return pos

    def tombstone(self, sample_id: int) -> "SlicePlan":
        """Revoke an id: re-chunk its slice over the surviving ids, in order."""
        sample_id = int(sample_id)
        if sample_id in self.tombstones:
            return self
        pos = self._locations.get(sample_id)
        if pos is None:
            raise NotFound(f"sample {sample_id} is not in the plan")
        i = pos[0]
        survivors = [
            sid for ids in self.slices[i - 1] for sid in ids if sid != sample_id
        ]
        new_slices = (
            self.slices[: i - 1]
            + (_chunk(np.asarray(survivors, dtype=np.int64), self.batch_size),)
            + self.slices[i:]
        )
        return SlicePlan(
            num_slices=self.num_slices,
            batch_size=self.batch_size,
            shuffle_seed=self.shuffle_seed,
            slices=new_slices,
            tombstones=self.tombstones | {sample_id},
        )

    def live_ids(self) -> np.ndarray:
        return np.sort(np.fromiter(self._locations.keys(), dtype=np.int64))

    def slice_ids(self, i: int) -> tuple[int, ...]:
        self._check_slice(i)
        return tuple(sid for ids in self.slices[i - 1] for sid in ids)

    def num_batches(self, i: int) -> int:
        self._check_slice(i)
        return len(self.slices[i - 1])

    def batch_ids(self, i: int, j: int) -> tuple[int, ...]:
        self._check_slice(i)
        if not 1 <= j <= len(self.slices[i - 1]):
            raise NotFound(f"slice {i} has no batch {j}")
        return self.slices[i - 1][j - 1]

    def slice_sizes(self) -> tuple[int, ...]:
        return tuple(sum(len(b) for b in batches) for batches in self.slices)

    def _check_slice(self, i: int) -> None:
        if not 1 <= i <= self.num_slices:
            raise NotFound(f"no slice {i} in a {self.num_slices}-slice plan")


def make_slice_plan(dataset: Dataset, num_slices: int, batch_size: int, seed: int) -> SlicePlan:
    """Shuffle ids by seed, split into near-equal contiguous slices, chunk each."""
    n = dataset.n
    if not 1 <= num_slices <= n:
        raise InvalidArgument(f"num_slices must be in [1, {n}], got {num_slices}")
    if batch_size < 1:
        raise InvalidArgument("batch_size must be >= 1")
    order = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(order, num_slices)
    slices = tuple(_chunk(part, batch_size) for part in parts)
    return SlicePlan(
        num_slices=num_slices, batch_size=batch_size, shuffle_seed=seed, slices=slices
    )
