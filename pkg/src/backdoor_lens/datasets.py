"""Dataset containers and loaders.

Everything downstream consumes :class:`LabeledDataset`: a float64 feature
matrix plus integer labels plus the feature range the values are known to
live in. Loaders normalize pixel data to [0, 1]; the CSV loader reports the
observed range.
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .errors import (
    CapacityError,
    ConsistencyError,
    FormatError,
    ParameterError,
    ParseError,
    SchemaError,
    ValidationError,
)

_IDX_IMAGE_MAGIC = 2051
_IDX_LABEL_MAGIC = 2049


@dataclass(frozen=True)
class LabeledDataset:
    """Immutable (features, labels) pair with declared feature range.

    features: float64 array of shape (n, d).
    labels: int64 array of shape (n,), nonnegative class ids. Binary
        learners additionally require them to be {0, 1}; that is checked at
        the learner boundary, not here, so multi-class sources (e.g. raw
        digit archives) can pass through poisoning and subsetting.
    feature_range: (lo, hi) bounds every feature entry respects.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_range: tuple[float, float]
    name: str = "dataset"

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels)
        if feats.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {feats.shape}")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise ValidationError(
                f"labels shape {labs.shape} does not match {feats.shape[0]} samples"
            )
        if not np.all(np.isfinite(feats)):
            raise ValidationError("features contain NaN or Inf")
        if labs.size and (not np.issubdtype(labs.dtype, np.integer) or labs.min() < 0):
            if np.issubdtype(labs.dtype, np.floating) and np.all(labs == labs.astype(np.int64)):
                labs = labs.astype(np.int64)
                if labs.size and labs.min() < 0:
                    raise ValidationError("labels must be nonnegative integers")
            else:
                raise ValidationError("labels must be nonnegative integers")
        labs = labs.astype(np.int64)
        lo, hi = float(self.feature_range[0]), float(self.feature_range[1])
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
            raise ValidationError(f"bad feature_range ({lo}, {hi})")
        if feats.size and (feats.min() < lo or feats.max() > hi):
            raise ValidationError(
                f"features fall outside declared range [{lo}, {hi}]: "
                f"observed [{feats.min()}, {feats.max()}]"
            )
        feats = feats.copy()
        feats.setflags(write=False)
        labs = labs.copy()
        labs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)
        object.__setattr__(self, "feature_range", (lo, hi))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, indices: Sequence[int], name: str | None = None) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.features[idx],
            self.labels[idx],
            self.feature_range,
            name if name is not None else self.name,
        )


@dataclass(frozen=True)
class DatasetSplit:
    train: LabeledDataset
    test: LabeledDataset
    seed: int = 0


def _open_maybe_gzip(path: Path) -> BinaryIO:
    fh = open(path, "rb")
    head = fh.read(2)
    fh.seek(0)
    if head == b"\x1f\x8b":
        return gzip.open(fh)  # type: ignore[return-value]
    return fh


def _read_exact(fh: BinaryIO, count: int, what: str, path: Path) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"{path}: truncated {what}: wanted {count} bytes, got {len(data)}")
    return data


def load_idx(images_path: str | Path, labels_path: str | Path, name: str | None = None) -> LabeledDataset:
    """Read a big-endian IDX image/label file pair (gzipped or raw).

    Image magic must be 2051 with dims (n, rows, cols); label magic 2049
    with dims (n,). Pixels are scaled to [0, 1] and flattened row-major to
    (n, rows*cols).
    """
    images_path = Path(images_path)
    labels_path = Path(labels_path)
    with _open_maybe_gzip(images_path) as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "image header", images_path))
        if magic != _IDX_IMAGE_MAGIC:
            raise FormatError(f"{images_path}: bad image magic {magic}, expected {_IDX_IMAGE_MAGIC}")
        raw = _read_exact(fh, n * rows * cols, "image payload", images_path)
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)

    with _open_maybe_gzip(labels_path) as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, "label header", labels_path))
        if magic != _IDX_LABEL_MAGIC:
            raise FormatError(f"{labels_path}: bad label magic {magic}, expected {_IDX_LABEL_MAGIC}")
        raw = _read_exact(fh, n_labels, "label payload", labels_path)
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if n_labels != n:
        raise ConsistencyError(f"{n} images but {n_labels} labels ({images_path}, {labels_path})")

    return LabeledDataset(
        pixels.astype(np.float64) / 255.0,
        labels,
        (0.0, 1.0),
        name if name is not None else images_path.stem,
    )


def load_feature_csv(
    path: str | Path,
    label_column: str = "label",
    binary: bool = False,
    name: str | None = None,
) -> LabeledDataset:
    """Read a feature CSV with a header row and one label column.

    Every non-label cell must parse as a finite real; violations raise
    ParseError naming the 1-based data row and the column header. binary=True
    additionally requires labels to be {0, 1}.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        if label_column not in header:
            raise SchemaError(f"{path}: no '{label_column}' column in header {header}")
        label_idx = header.index(label_column)
        feature_cols = [j for j in range(len(header)) if j != label_idx]

        rows: list[list[float]] = []
        labels: list[int] = []
        for i, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}: row {i} has {len(row)} cells, header has {len(header)}"
                )
            feats = []
            for j in feature_cols:
                try:
                    v = float(row[j])
                except ValueError:
                    raise ParseError(
                        f"{path}: row {i}, column '{header[j]}': "
                        f"cannot parse {row[j]!r} as a real number"
                    ) from None
                if not np.isfinite(v):
                    raise ParseError(
                        f"{path}: row {i}, column '{header[j]}': non-finite value {row[j]!r}"
                    )
                feats.append(v)
            try:
                lv = float(row[label_idx])
            except ValueError:
                raise ParseError(
                    f"{path}: row {i}, column '{label_column}': "
                    f"cannot parse {row[label_idx]!r} as a label"
                ) from None
            if not np.isfinite(lv) or lv != int(lv) or lv < 0:
                raise ParseError(
                    f"{path}: row {i}, column '{label_column}': "
                    f"label must be a nonnegative integer, got {row[label_idx]!r}"
                )
            rows.append(feats)
            labels.append(int(lv))

    if not rows:
        raise SchemaError(f"{path}: header only, no data rows")
    features = np.asarray(rows, dtype=np.float64)
    label_arr = np.asarray(labels, dtype=np.int64)
    if binary and not set(np.unique(label_arr)) <= {0, 1}:
        raise ValidationError(
            f"{path}: binary=True but labels are {sorted(set(labels))}"
        )
    return LabeledDataset(
        features,
        label_arr,
        (float(features.min()), float(features.max())),
        name if name is not None else path.stem,
    )


def save_feature_csv(dataset: LabeledDataset, path: str | Path) -> None:
    """Write `f0,...,f{d-1},label` rows; floats use %.17g so they round-trip."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{j}" for j in range(dataset.n_features)] + ["label"])
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow(["%.17g" % v for v in x] + [str(int(y))])


def subset_binary(
    dataset: LabeledDataset,
    class_a: int,
    class_b: int,
    n_train: int,
    n_test: int,
    seed: int = 0,
) -> DatasetSplit:
    """Sample a two-class train/test split, relabeling class_a→0, class_b→1.

    A seeded uniform permutation of the pooled class_a/class_b indices feeds
    the first n_train rows to train and the next n_test to test; inside each
    split the original row order is restored so output is stable.
    """
    if class_a == class_b:
        raise ParameterError(f"class_a and class_b must differ, both are {class_a}")
    if n_train < 1 or n_test < 1:
        raise ParameterError(f"need positive split sizes, got {n_train}/{n_test}")
    mask_a = dataset.labels == class_a
    mask_b = dataset.labels == class_b
    if not mask_a.any():
        raise CapacityError(f"class {class_a} absent from {dataset.name}")
    if not mask_b.any():
        raise CapacityError(f"class {class_b} absent from {dataset.name}")
    pool = np.flatnonzero(mask_a | mask_b)
    if pool.size < n_train + n_test:
        raise CapacityError(
            f"classes {class_a}/{class_b} have {pool.size} samples, "
            f"need {n_train + n_test}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(pool)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train : n_train + n_test])

    def _take(idx: np.ndarray, tag: str) -> LabeledDataset:
        feats = dataset.features[idx]
        labs = (dataset.labels[idx] == class_b).astype(np.int64)
        return LabeledDataset(
            feats,
            labs,
            dataset.feature_range,
            f"{dataset.name}[{class_a}vs{class_b}]-{tag}",
        )

    return DatasetSplit(_take(train_idx, "train"), _take(test_idx, "test"), seed)


def make_blobs(
    n_per_class: int,
    centers: Sequence[Sequence[float]] = ((-1.0, 0.0), (1.0, 0.0)),
    stddev: float = 0.3,
    seed: int = 0,
) -> LabeledDataset:
    """Two isotropic Gaussian blobs, labels 0 and 1, deterministic per seed."""
    if n_per_class < 1:
        raise ParameterError(f"n_per_class must be >= 1, got {n_per_class}")
    if not stddev > 0:
        raise ParameterError(f"stddev must be positive, got {stddev}")
    c = np.asarray(centers, dtype=np.float64)
    if c.shape != (2, 2):
        raise ParameterError(f"centers must be two 2-D points, got shape {c.shape}")
    rng = np.random.default_rng(seed)
    x0 = c[0] + stddev * rng.standard_normal((n_per_class, 2))
    x1 = c[1] + stddev * rng.standard_normal((n_per_class, 2))
    features = np.vstack([x0, x1])
    labels = np.repeat(np.array([0, 1], dtype=np.int64), n_per_class)
    return LabeledDataset(
        features,
        labels,
        (float(features.min()), float(features.max())),
        "blobs",
    )
