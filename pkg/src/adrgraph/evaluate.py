"""Performance-matrix metrics, class-skew diagnostic, and embedding drift."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import GcnModel, embed


def as_performance_matrix(M) -> np.ndarray:
    """Square float array; entries above the diagonal are ignored (set to NaN)."""
    if isinstance(M, np.ndarray) and M.ndim == 2:
        A = M.astype(np.float64, copy=True)
    else:
        rows = list(M)
        N = len(rows)
        A = np.full((N, N), np.nan)
        for t, row in enumerate(rows):
            row = list(row)
            if len(row) > t + 1:
                row = row[: t + 1]
            A[t, : len(row)] = [np.nan if v is None else float(v) for v in row]
    if A.shape[0] == 0:
        raise ValueError("performance matrix is empty")
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"performance matrix must be square, got {A.shape}")
    A[np.triu_indices(A.shape[0], 1)] = np.nan
    low = A[np.tril_indices(A.shape[0])]
    low = low[~np.isnan(low)]
    if low.size and (low.min() < 0.0 or low.max() > 1.0):
        raise ValueError("accuracies must lie in [0, 1]")
    return A


def per_task_accuracy(M) -> np.ndarray:
    """A_t = mean of row t over tasks 0..t."""
    A = as_performance_matrix(M)
    return np.array([A[t, : t + 1].sum() / (t + 1) for t in range(A.shape[0])])


def avg_incremental_accuracy(M) -> float:
    return float(np.mean(per_task_accuracy(M)))


def final_accuracy(M) -> float:
    A = as_performance_matrix(M)
    N = A.shape[0]
    return float(A[N - 1, :N].sum() / N)


def learning_accuracy(M) -> float:
    A = as_performance_matrix(M)
    return float(np.diag(A).sum() / A.shape[0])


def class_skew(task, split: str | None = None) -> float:
    """max / min class size within a task.

    Counts every labeled node of the task by default, or only the nodes of
    ``split`` ("train", "val", "test"). A plain ``{class: count}`` mapping is
    accepted too.
    """
    if hasattr(task, "class_counts"):
        if split is None:
            counts = {c: int(np.sum(task.labels == c)) for c in task.classes}
        else:
            counts = task.class_counts(split)
    else:
        counts = dict(task)
    values = list(counts.values())
    if not values or min(values) == 0:
        empty = [c for c, v in counts.items() if v == 0]
        raise ValueError(f"class skew undefined: classes {empty} have no nodes")
    return max(values) / min(values)


def _nan_to_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def metrics_dict(M, rho=None, drift=None, complete: bool = True) -> dict:
    """Metrics JSON payload. With ``complete=False`` only A_f is defined."""
    A = as_performance_matrix(M)
    out = {
        "A_avg": avg_incremental_accuracy(A) if complete else None,
        "A_f": final_accuracy(A),
        "A_l": learning_accuracy(A) if complete else None,
        "per_task_A_t": [float(v) for v in per_task_accuracy(A)] if complete else None,
        "rho_t": [float(r) for r in rho] if rho is not None else [],
    }
    if drift is not None:
        out["drift"] = drift
    return out


def dump_metrics(metrics: dict) -> str:
    return json.dumps({k: _nan_to_none(v) for k, v in metrics.items()}, indent=2, sort_keys=True) + "\n"


def matrix_to_csv(M) -> str:
    A = as_performance_matrix(M)
    N = A.shape[0]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["", *(f"t{i}" for i in range(N))])
    for t in range(N):
        w.writerow([f"t{t}", *("" if math.isnan(v) else repr(float(v)) for v in A[t])])
    return buf.getvalue()


def matrix_from_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or len(rows) < 2:
        raise ValueError("performance matrix CSV has no data rows")
    N = len(rows) - 1
    A = np.full((N, N), np.nan)
    for t, row in enumerate(rows[1:]):
        for i, cell in enumerate(row[1 : N + 1]):
            if cell != "":
                A[t, i] = float(cell)
    return as_performance_matrix(A)


def write_matrix_csv(path, M) -> None:
    Path(path).write_text(matrix_to_csv(M), encoding="utf-8")


def read_matrix_csv(path) -> np.ndarray:
    return matrix_from_csv(Path(path).read_text(encoding="utf-8"))


# ------------------------------------------------------------------ drift


@dataclass(frozen=True)
class DriftReport:
    """``mean_l2[i, t]``: mean row distance between encoder-i and encoder-t embeddings of graph i."""

    mean_l2: np.ndarray
    normalized: np.ndarray

    def pairs(self):
        N = self.mean_l2.shape[0]
        return [(i, t) for t in range(N) for i in range(t)]

    @property
    def mean_normalized(self) -> float:
        p = self.pairs()
        if not p:
            return 0.0
        return float(np.mean([self.normalized[i, t] for i, t in p]))

    @property
    def base_final_normalized(self) -> float:
        return float(self.normalized[0, -1])

    def to_dict(self) -> dict:
        def clean(A):
            return [[None if math.isnan(v) else float(v) for v in row] for row in A]

        return {
            "mean_l2": clean(self.mean_l2),
            "normalized": clean(self.normalized),
            "mean_normalized": self.mean_normalized,
            "base_final_normalized": self.base_final_normalized,
        }


def drift_between(enc_a: GcnModel, enc_b: GcnModel, graph) -> tuple[float, float]:
    Ha = embed(enc_a, graph)
    Hb = embed(enc_b, graph)
    dist = float(np.mean(np.linalg.norm(Ha - Hb, axis=1)))
    scale = float(np.mean(np.linalg.norm(Ha, axis=1)))
    return dist, (dist / scale if scale > 0 else 0.0)


def measure_drift(checkpoints: Sequence[GcnModel], task_graphs: Sequence) -> DriftReport:
    """Encoder checkpoints taken after each task vs. the graphs of those tasks."""
    N = len(task_graphs)
    if len(checkpoints) < N:
        raise ValueError(f"missing checkpoint: {len(checkpoints)} encoders for {N} tasks")
    L = np.full((N, N), np.nan)
    R = np.full((N, N), np.nan)
    for i in range(N):
        L[i, i] = R[i, i] = 0.0
        for t in range(i + 1, N):
            L[i, t], R[i, t] = drift_between(checkpoints[i], checkpoints[t], task_graphs[i])
    return DriftReport(L, R)
