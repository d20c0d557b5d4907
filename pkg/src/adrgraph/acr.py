"""Analytic classifier reconstruction on top of the merged encoder.

Embeddings pass through a frozen random expansion ``relu(H W_psi)`` and the
head is the ridge solution over the accumulated ``R_phi = sum B_i^T B_i`` and
``Q_phi = sum B_i^T Y_i``. Adding a task only appends label columns to
``Q_phi``; ``R_phi`` never changes size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import GcnModel, embed
from .linalg import RidgeProblem, ShapeError, as_matrix, cross_accumulate, gram_accumulate, load_matrix, ridge_solve, save_matrix

ALPHA_GRID = (1, 2, 4, 8, 16, 32, 64)


class ClassOverlapError(ValueError):
    """A task reuses a class id that an earlier task already introduced."""


@dataclass(frozen=True)
class FeatureBuffer:
    in_dim: int
    alpha: int
    seed: int
    weights: np.ndarray | None  # None means identity (alpha == 1)

    @classmethod
    def create(cls, in_dim: int, alpha: int, seed: int) -> FeatureBuffer:
        if int(alpha) < 1:
            raise ValueError(f"alpha must be a positive integer, got {alpha}")
        if int(alpha) == 1:
            return cls(int(in_dim), 1, int(seed), None)
        rng = np.random.default_rng(seed)
        W = rng.standard_normal((in_dim, alpha * in_dim)) / np.sqrt(in_dim)
        W.setflags(write=False)
        return cls(int(in_dim), int(alpha), int(seed), W)

    @property
    def out_dim(self) -> int:
        return self.alpha * self.in_dim


def expand(buffer: FeatureBuffer, H_M) -> np.ndarray:
    H_M = as_matrix(H_M, "H_M")
    if H_M.shape[1] != buffer.in_dim:
        raise ShapeError(f"embeddings have {H_M.shape[1]} columns, buffer expects {buffer.in_dim}")
    if buffer.weights is None:
        return H_M.copy()
    return np.maximum(H_M @ buffer.weights, 0.0)


def one_hot(labels: np.ndarray, classes: Sequence[int]) -> np.ndarray:
    pos = {int(c): j for j, c in enumerate(classes)}
    Y = np.zeros((labels.shape[0], len(classes)))
    for i, y in enumerate(labels):
        Y[i, pos[int(y)]] = 1.0
    return Y


@dataclass(frozen=True)
class ClassifierMemoryBank:
    R: np.ndarray
    Q: np.ndarray
    seen_classes: tuple[int, ...] = ()

    @classmethod
    def empty(cls, dim: int) -> ClassifierMemoryBank:
        return cls(np.zeros((dim, dim)), np.zeros((dim, 0)), ())

    @property
    def dim(self) -> int:
        return self.R.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [self.R, self.Q]

    def nbytes(self) -> int:
        return self.R.nbytes + self.Q.nbytes


def update_classifier_bank(
    bank: ClassifierMemoryBank, H_B, Y_onehot, classes: Sequence[int]
) -> ClassifierMemoryBank:
    """Accumulate one task; ``Y_onehot`` columns follow ``classes`` (all new)."""
    classes = tuple(int(c) for c in classes)
    overlap = set(classes) & set(bank.seen_classes)
    if overlap:
        raise ClassOverlapError(f"classes {sorted(overlap)} were already seen")
    H_B = as_matrix(H_B, "H_B")
    Y = as_matrix(Y_onehot, "Y")
    if Y.shape[1] != len(classes):
        raise ShapeError(f"Y has {Y.shape[1]} columns for {len(classes)} classes")
    Q = np.hstack([bank.Q, np.zeros((bank.dim, len(classes)))])
    Y_full = np.hstack([np.zeros((Y.shape[0], bank.Q.shape[1])), Y])
    return ClassifierMemoryBank(
        gram_accumulate(bank.R, H_B),
        cross_accumulate(Q, H_B, Y_full),
        bank.seen_classes + classes,
    )


def reconstruct_classifier(bank: ClassifierMemoryBank, gamma: float) -> np.ndarray:
    if not bank.seen_classes:
        raise ValueError("cannot reconstruct from an empty bank")
    return ridge_solve(RidgeProblem(bank.R, bank.Q, gamma))


def scores_to_classes(scores: np.ndarray, classes: Sequence[int]) -> np.ndarray:
    """Row-wise argmax mapped to class ids; ties go to the lowest class id."""
    classes = np.asarray(classes)
    order = np.argsort(classes, kind="stable")
    return classes[order][np.argmax(scores[:, order], axis=1)]


def predict(
    merged_encoder: GcnModel, buffer: FeatureBuffer, W_phi: np.ndarray, graph, classes: Sequence[int]
) -> np.ndarray:
    B = expand(buffer, embed(merged_encoder, graph))
    return scores_to_classes(B @ W_phi, classes)


# ------------------------------------------------------------- checkpoint


def save_classifier_bank(bank: ClassifierMemoryBank, buffer: FeatureBuffer, dir_path, gamma=None) -> None:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    save_matrix(root / "R_phi.bin", bank.R)
    save_matrix(root / "Q_phi.bin", bank.Q)
    manifest = {
        "kind": "classifier",
        "seen_classes": list(bank.seen_classes),
        "alpha": buffer.alpha,
        "buffer_seed": buffer.seed,
        "buffer_in_dim": buffer.in_dim,
        "gamma": gamma,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_classifier_bank(dir_path) -> tuple[ClassifierMemoryBank, FeatureBuffer]:
    root = Path(dir_path)
    manifest = json.loads((root / "manifest.json").read_text())
    bank = ClassifierMemoryBank(
        load_matrix(root / "R_phi.bin"),
        load_matrix(root / "Q_phi.bin"),
        tuple(int(c) for c in manifest["seen_classes"]),
    )
    buffer = FeatureBuffer.create(manifest["buffer_in_dim"], manifest["alpha"], manifest["buffer_seed"])
    return bank, buffer
