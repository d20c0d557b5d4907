"""Dataset files, the synthetic block-model generator, and task streams."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import (
    SPLIT_NONE,
    SPLIT_TEST,
    SPLIT_TRAIN,
    SPLIT_VAL,
    TaskGraph,
    canonical_edges,
    induce_task_subgraph,
)


class DatasetParseError(ValueError):
    def __init__(self, path, line: int, msg: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {msg}")


class RaggedFeaturesError(DatasetParseError):
    pass


class LabelRangeError(DatasetParseError):
    pass


class NodeIndexError(DatasetParseError):
    pass


@dataclass(frozen=True)
class RawDataset:
    features: np.ndarray
    labels: np.ndarray
    edges: np.ndarray  # canonical (m, 2), src < dst
    class_count: int

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on node count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("labels outside [0, class_count)")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")

    @property
    def num_nodes(self) -> int:
        return int(self.labels.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


def make_dataset(features, labels, edges, class_count: int | None = None) -> RawDataset:
    X = np.ascontiguousarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if class_count is None:
        class_count = int(y.max()) + 1 if y.size else 0
    return RawDataset(X, y, canonical_edges(edges, y.shape[0]), int(class_count))


# ------------------------------------------------------------------ files


def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line.strip():
                yield lineno, line


def load_dataset(dir_path) -> RawDataset:
    """Read ``features.tsv``, ``labels.tsv`` and ``edges.tsv`` from a directory."""
    root = Path(dir_path)
    fpath, lpath, epath = root / "features.tsv", root / "labels.tsv", root / "edges.tsv"
    for p in (fpath, lpath, epath):
        if not p.is_file():
            raise FileNotFoundError(p)

    rows: list[list[float]] = []
    width = None
    for lineno, line in _data_lines(fpath):
        try:
            vals = [float(tok) for tok in line.split("\t")]
        except ValueError as exc:
            raise DatasetParseError(fpath, lineno, f"bad float: {exc}") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise RaggedFeaturesError(fpath, lineno, f"expected {width} columns, got {len(vals)}")
        if not all(math.isfinite(v) for v in vals):
            raise DatasetParseError(fpath, lineno, "non-finite feature value")
        rows.append(vals)
    n = len(rows)
    features = np.array(rows, dtype=np.float64).reshape(n, width or 0)

    labels = []
    for lineno, line in _data_lines(lpath):
        try:
            y = int(line.strip())
        except ValueError:
            raise DatasetParseError(lpath, lineno, f"bad label {line!r}") from None
        if y < 0:
            raise LabelRangeError(lpath, lineno, f"label {y} is negative")
        if len(labels) >= n:
            raise LabelRangeError(lpath, lineno, f"more labels than the {n} feature rows")
        labels.append(y)
    if len(labels) != n:
        raise LabelRangeError(lpath, len(labels) + 1, f"{len(labels)} labels for {n} feature rows")

    edges = []
    for lineno, line in _data_lines(epath):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetParseError(epath, lineno, f"expected 2 node ids, got {len(parts)}")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetParseError(epath, lineno, f"bad node id in {line!r}") from None
        for v in (a, b):
            if not 0 <= v < n:
                raise NodeIndexError(epath, lineno, f"node {v} outside [0, {n})")
        edges.append((a, b))
    return make_dataset(features, labels, edges)


def save_dataset(ds: RawDataset, dir_path) -> None:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "features.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for row in ds.features:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")
    with open(root / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{int(y)}\n" for y in ds.labels)
    with open(root / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{int(a)}\t{int(b)}\n" for a, b in ds.edges)


# -------------------------------------------------------------------- SBM


@dataclass(frozen=True)
class SbmSpec:
    blocks: tuple[int, ...]
    p_intra: float
    p_inter: float
    feature_dim: int
    feature_shift: float | tuple[float, ...] = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        if not self.blocks or min(self.blocks) < 1:
            raise ValueError("every block needs at least one node")
        for p in (self.p_intra, self.p_inter):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"edge probability {p} outside [0, 1]")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if not np.isscalar(self.feature_shift):
            shift = tuple(float(s) for s in self.feature_shift)
            if len(shift) != len(self.blocks):
                raise ValueError("feature_shift list must have one entry per block")
            object.__setattr__(self, "feature_shift", shift)


def generate_sbm(spec: SbmSpec) -> RawDataset:
    """Block model with Gaussian features centred on ``shift * e_{class mod d}``."""
    rng = np.random.default_rng(spec.seed)
    labels = np.repeat(np.arange(len(spec.blocks)), spec.blocks)
    n = labels.shape[0]
    chunks = []
    for i in range(n - 1):
        same = labels[i + 1 :] == labels[i]
        prob = np.where(same, spec.p_intra, spec.p_inter)
        hit = np.nonzero(rng.random(n - 1 - i) < prob)[0]
        if hit.size:
            chunks.append(np.stack([np.full(hit.size, i), hit + i + 1], axis=1))
    edges = np.concatenate(chunks) if chunks else np.zeros((0, 2), dtype=np.int64)

    shift = np.broadcast_to(np.asarray(spec.feature_shift, dtype=np.float64), (len(spec.blocks),))
    means = np.zeros((len(spec.blocks), spec.feature_dim))
    means[np.arange(len(spec.blocks)), np.arange(len(spec.blocks)) % spec.feature_dim] = shift
    features = means[labels] + rng.standard_normal((n, spec.feature_dim))
    return make_dataset(features, labels, edges, class_count=len(spec.blocks))


# ----------------------------------------------------------------- stream


@dataclass(frozen=True)
class TaskStreamSpec:
    base_classes: int
    increment_classes: int = 2
    split_ratio: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    shuffle_classes: bool = False

    def __post_init__(self):
        ratio = tuple(float(r) for r in self.split_ratio)
        if len(ratio) != 3 or min(ratio) <= 0 or abs(sum(ratio) - 1.0) > 1e-9:
            raise ValueError(f"split_ratio must be three positive fractions summing to 1, got {ratio}")
        object.__setattr__(self, "split_ratio", ratio)
        if self.base_classes < 1 or self.increment_classes < 1:
            raise ValueError("base_classes and increment_classes must be positive")

    def num_tasks(self, class_count: int) -> int:
        extra = class_count - self.base_classes
        if extra < 0 or extra % self.increment_classes:
            raise ValueError(
                f"{class_count} classes cannot be split as {self.base_classes} + "
                f"k x {self.increment_classes}"
            )
        return 1 + extra // self.increment_classes


def _ceil(x: float) -> int:
    return int(math.ceil(x - 1e-9))


def split_counts(n: int, ratio: Sequence[float]) -> tuple[int, int, int]:
    """Train gets ceil(r0 n); the rest splits val/test by r1 : r2, val rounded up.

    For 6:2:2 this leaves at least one test node whenever n >= 5.
    """
    train = min(n, _ceil(ratio[0] * n))
    rest = n - train
    tail = ratio[1] + ratio[2]
    val = min(rest, _ceil(rest * ratio[1] / tail)) if tail > 0 else 0
    return train, val, rest - val


def split_nodes(labels: np.ndarray, ratio: Sequence[float], seed: int) -> np.ndarray:
    """Per-class seeded shuffle into train/val/test codes."""
    rng = np.random.default_rng(seed)
    codes = np.full(labels.shape[0], SPLIT_NONE, dtype=np.int8)
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        idx = idx[rng.permutation(idx.shape[0])]
        tr, va, _ = split_counts(idx.shape[0], ratio)
        codes[idx[:tr]] = SPLIT_TRAIN
        codes[idx[tr : tr + va]] = SPLIT_VAL
        codes[idx[tr + va :]] = SPLIT_TEST
    return codes


def class_order(class_count: int, spec: TaskStreamSpec) -> list[int]:
    order = list(range(class_count))
    if spec.shuffle_classes:
        order = [int(c) for c in np.random.default_rng(spec.seed).permutation(class_count)]
    return order


def task_class_sets(class_count: int, spec: TaskStreamSpec) -> list[list[int]]:
    n_tasks = spec.num_tasks(class_count)
    order = class_order(class_count, spec)
    sets = [order[: spec.base_classes]]
    for t in range(1, n_tasks):
        lo = spec.base_classes + (t - 1) * spec.increment_classes
        sets.append(order[lo : lo + spec.increment_classes])
    return sets


def build_task_stream(ds: RawDataset, spec: TaskStreamSpec) -> list[TaskGraph]:
    split = split_nodes(ds.labels, spec.split_ratio, spec.seed)
    tasks, assigned = [], []
    for t, classes in enumerate(task_class_sets(ds.class_count, spec)):
        tasks.append(induce_task_subgraph(ds, classes, split=split, task_id=t, assigned=assigned))
        assigned.extend(classes)
    return tasks
