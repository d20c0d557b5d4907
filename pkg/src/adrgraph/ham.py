"""Layer-wise analytic merging of task encoders.

For every layer the bank keeps only ``R_k = sum_i Ahat_ik^T Ahat_ik`` and
``Q_k = sum_i Ahat_ik^T H_ik``. The merged layer is the ridge solution
``(R_k + gamma I)^-1 Q_k``, which equals the joint ridge fit over the stacked
per-task (input, output) pairs without ever storing them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import GcnModel, forward_tapped
from .linalg import RidgeProblem, ShapeError, cross_accumulate, gram_accumulate, load_matrix, ridge_solve, save_matrix

LayerStats = list[tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class EncoderMemoryBank:
    R: tuple[np.ndarray, ...]
    Q: tuple[np.ndarray, ...]
    task_count: int = 0

    @classmethod
    def empty(cls, dims: Sequence[int]) -> EncoderMemoryBank:
        """``dims`` is the chain ``[d_in, d_1, ..., d_K]``."""
        R = tuple(np.zeros((a, a)) for a in dims[:-1])
        Q = tuple(np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:]))
        return cls(R, Q, 0)

    @property
    def num_layers(self) -> int:
        return len(self.R)

    def dims(self) -> list[int]:
        return [self.R[0].shape[0]] + [q.shape[1] for q in self.Q]

    def nbytes(self) -> int:
        return sum(a.nbytes for a in self.R) + sum(a.nbytes for a in self.Q)

    def arrays(self) -> list[np.ndarray]:
        return [*self.R, *self.Q]


def collect_layer_statistics(trained_model: GcnModel, task_graph) -> LayerStats:
    """One eval-mode pass of the task encoder over its own graph: ``[(Ahat_k, H_k)]``."""
    tape = forward_tapped(trained_model, task_graph, train_mode=False)
    return list(zip(tape.agg_inputs, tape.pre_acts))


def update_bank(bank: EncoderMemoryBank, stats: LayerStats) -> EncoderMemoryBank:
    if len(stats) != bank.num_layers:
        raise ShapeError(f"bank has {bank.num_layers} layers, got statistics for {len(stats)}")
    R, Q = [], []
    for k, (Ahat, H) in enumerate(stats):
        if Ahat.shape[1] != bank.R[k].shape[0] or H.shape[1] != bank.Q[k].shape[1]:
            raise ShapeError(
                f"layer {k}: statistics are {Ahat.shape[1]}->{H.shape[1]}, bank is "
                f"{bank.Q[k].shape[0]}->{bank.Q[k].shape[1]}"
            )
        R.append(gram_accumulate(bank.R[k], Ahat))
        Q.append(cross_accumulate(bank.Q[k], Ahat, H))
    return EncoderMemoryBank(tuple(R), tuple(Q), bank.task_count + 1)


@dataclass(frozen=True)
class MergedEncoder:
    layer_weights: tuple[np.ndarray, ...]
    gamma: float
    task_count: int


def merge(bank: EncoderMemoryBank, gamma: float, template_model: GcnModel | None = None):
    """Closed-form merged layers.

    Returns a :class:`MergedEncoder`; when ``template_model`` is given, returns
    a copy of it with the encoder layers replaced instead.
    """
    if bank.task_count == 0:
        raise ValueError("cannot merge an empty bank")
    layers = tuple(ridge_solve(RidgeProblem(R, Q, gamma)) for R, Q in zip(bank.R, bank.Q))
    if template_model is not None:
        if template_model.dims() != bank.dims():
            raise ShapeError(f"template dims {template_model.dims()} != bank dims {bank.dims()}")
        return template_model.with_encoder(layers)
    return MergedEncoder(layers, float(gamma), bank.task_count)


class JointOracleCache:
    """Test/debug helper that keeps raw per-task statistics to check the recursion.

    Never used by the learners; holding it breaks the no-exemplar guarantee by design.
    """

    def __init__(self):
        self.stats: list[LayerStats] = []

    def add(self, stats: LayerStats) -> None:
        self.stats.append([(a.copy(), h.copy()) for a, h in stats])

    def solve(self, gamma: float) -> list[np.ndarray]:
        out = []
        for k in range(len(self.stats[0])):
            X = np.vstack([s[k][0] for s in self.stats])
            T = np.vstack([s[k][1] for s in self.stats])
            out.append(np.linalg.solve(X.T @ X + gamma * np.eye(X.shape[1]), X.T @ T))
        return out


# ------------------------------------------------------------- checkpoint


def save_encoder_bank(bank: EncoderMemoryBank, dir_path, gamma: float | None = None) -> None:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    for k, (R, Q) in enumerate(zip(bank.R, bank.Q)):
        save_matrix(root / f"R_{k}.bin", R)
        save_matrix(root / f"Q_{k}.bin", Q)
    manifest = {"kind": "encoder", "K": bank.num_layers, "dims": bank.dims(), "task_count": bank.task_count, "gamma": gamma}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_encoder_bank(dir_path) -> EncoderMemoryBank:
    root = Path(dir_path)
    manifest = json.loads((root / "manifest.json").read_text())
    K = int(manifest["K"])
    R = tuple(load_matrix(root / f"R_{k}.bin") for k in range(K))
    Q = tuple(load_matrix(root / f"Q_{k}.bin") for k in range(K))
    return EncoderMemoryBank(R, Q, int(manifest["task_count"]))
