"""Dataset loading, synthetic generation, splitting, and label-based partitioning."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Raised when a file does not carry the expected IDX magic number."""


class DataConsistencyError(ValueError):
    """Raised when image and label files disagree or a file is truncated."""


class PartitionSpecError(ValueError):
    """Raised when a partition spec does not cover the labels present."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus integer class labels."""

    features: np.ndarray  # [n_samples, n_features], float64
    labels: np.ndarray  # [n_samples], int64 in [0, n_classes)
    n_classes: int

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1 or len(labels) != len(features):
            raise DataConsistencyError(
                f"label count {len(labels)} != sample count {len(features)}"
            )
        if len(labels) and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError("labels must lie in [0, n_classes)")
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


@dataclass(frozen=True)
class NodeData:
    """One simulated participant's private train and validation splits."""

    node_id: int
    train: Dataset
    validation: Dataset


@dataclass(frozen=True)
class PartitionSpec:
    """Label-to-node assignment: exclusive label sets plus uniformly shared labels."""

    k: int
    assignment: tuple  # per node, a frozenset of exclusive labels
    shared_labels: frozenset = frozenset()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "assignment", tuple(frozenset(a) for a in self.assignment)
        )
        object.__setattr__(self, "shared_labels", frozenset(self.shared_labels))
        if len(self.assignment) != self.k:
            raise PartitionSpecError(
                f"assignment has {len(self.assignment)} entries for k={self.k}"
            )
        seen = set()
        for labels in self.assignment:
            if labels & seen:
                raise PartitionSpecError("label assigned to more than one node")
            seen |= labels
        if seen & self.shared_labels:
            raise PartitionSpecError("label both exclusive and shared")

    @property
    def covered_labels(self) -> frozenset:
        out = set(self.shared_labels)
        for labels in self.assignment:
            out |= labels
        return frozenset(out)


def _read_idx_header(raw: bytes, path, expected_magic: int):
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    return dims, raw[4 + 4 * ndim :]


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair into a Dataset.

    Pixels are scaled to [0, 1]; each image is flattened row-major.
    """
    with open(images_path, "rb") as f:
        img_raw = f.read()
    with open(labels_path, "rb") as f:
        lab_raw = f.read()

    img_dims, img_body = _read_idx_header(img_raw, images_path, IDX_IMAGES_MAGIC)
    lab_dims, lab_body = _read_idx_header(lab_raw, labels_path, IDX_LABELS_MAGIC)

    n_images, rows, cols = img_dims
    (n_labels,) = lab_dims
    if n_images != n_labels:
        raise DataConsistencyError(
            f"{n_images} images but {n_labels} labels ({images_path}, {labels_path})"
        )
    if len(img_body) != n_images * rows * cols:
        raise DataConsistencyError(
            f"{images_path}: expected {n_images * rows * cols} pixel bytes, "
            f"got {len(img_body)}"
        )
    if len(lab_body) != n_labels:
        raise DataConsistencyError(
            f"{labels_path}: expected {n_labels} label bytes, got {len(lab_body)}"
        )

    pixels = np.frombuffer(img_body, dtype=np.uint8).reshape(n_images, rows * cols)
    labels = np.frombuffer(lab_body, dtype=np.uint8).astype(np.int64)
    features = pixels.astype(np.float64) / 255.0
    return Dataset(features, labels, n_classes=int(labels.max()) + 1 if n_labels else 0)


def generate_synthetic(n_classes: int, n_features: int, per_class: int,
                       spread: float, seed: int) -> Dataset:
    """Clustered-Gaussian dataset: one isotropic blob per class around a random mean."""
    if n_classes <= 0 or n_features <= 0 or per_class <= 0:
        raise ValueError("counts must be positive")
    if spread <= 0:
        raise ValueError("spread must be > 0")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, 1.0, size=(n_classes, n_features))
    features = np.concatenate(
        [rng.normal(means[c], spread, size=(per_class, n_features))
         for c in range(n_classes)]
    )
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), per_class)
    return Dataset(features, labels, n_classes)


def split(d: Dataset, train_n: int, val_n: int, test_n: int,
          seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint shuffled train/val/test subsets of the stated sizes."""
    total = train_n + val_n + test_n
    if total > len(d):
        raise ValueError(f"requested {total} samples but dataset has {len(d)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(d))
    tr = d.subset(perm[:train_n])
    va = d.subset(perm[train_n : train_n + val_n])
    te = d.subset(perm[train_n + val_n : total])
    return tr, va, te


def _shared_share(idx: np.ndarray, k: int, rng) -> list:
    """Round-robin split of a shuffled index set into k near-equal pieces."""
    shuffled = idx[rng.permutation(len(idx))]
    return [shuffled[node::k] for node in range(k)]


def partition(train: Dataset, val: Dataset, spec: PartitionSpec) -> list:
    """Distribute train/val samples to nodes according to a label assignment.

    Exclusive labels go wholly to their node; shared labels are divided
    uniformly (seeded shuffle, round-robin) so node shares differ by at most
    one sample per label.
    """
    covered = spec.covered_labels
    for name, d in (("train", train), ("val", val)):
        present = set(np.unique(d.labels).tolist())
        if not present <= covered:
            raise PartitionSpecError(
                f"{name} split contains uncovered labels {sorted(present - covered)}"
            )

    rng = np.random.default_rng(spec.seed)
    nodes = []
    per_node_idx = {name: [[] for _ in range(spec.k)] for name in ("train", "val")}
    for name, d in (("train", train), ("val", val)):
        for node, labels in enumerate(spec.assignment):
            if labels:
                mask = np.isin(d.labels, sorted(labels))
                per_node_idx[name][node].append(np.flatnonzero(mask))
        for label in sorted(spec.shared_labels):
            idx = np.flatnonzero(d.labels == label)
            for node, share in enumerate(_shared_share(idx, spec.k, rng)):
                per_node_idx[name][node].append(share)

    for node in range(spec.k):
        tr_idx = np.sort(np.concatenate(per_node_idx["train"][node] or [np.array([], dtype=np.int64)]))
        va_idx = np.sort(np.concatenate(per_node_idx["val"][node] or [np.array([], dtype=np.int64)]))
        nodes.append(
            NodeData(node_id=node, train=train.subset(tr_idx), validation=val.subset(va_idx))
        )
    return nodes
