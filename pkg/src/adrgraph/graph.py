"""Undirected graphs, GCN normalization, and task / global-test graph construction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import _kernels
from .linalg import ShapeError, as_matrix

if TYPE_CHECKING:
    from .datasets import RawDataset


def canonical_edges(edges, num_nodes: int) -> np.ndarray:
    """Symmetrize, drop self-loops and duplicates; return sorted (m, 2) with src < dst."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= num_nodes):
        raise IndexError(f"edge endpoint out of range for {num_nodes} nodes")
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    keep = lo != hi
    e = np.stack([lo[keep], hi[keep]], axis=1)
    if e.shape[0] == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(e, axis=0)


@dataclass(frozen=True)
class SparseGraph:
    """Undirected graph; ``edges`` holds each edge once as (src < dst)."""

    num_nodes: int
    edges: np.ndarray
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, num_nodes: int, edges) -> SparseGraph:
        e = canonical_edges(edges, num_nodes)
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=num_nodes), out=indptr[1:])
        return cls(int(num_nodes), e, indptr, dst.astype(np.int64))

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node] : self.indptr[node + 1]]

    def dense(self) -> np.ndarray:
        A = np.zeros((self.num_nodes, self.num_nodes))
        A[self.edges[:, 0], self.edges[:, 1]] = 1.0
        A[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return A


@dataclass(frozen=True)
class NormalizedAdjacency:
    """CSR form of D^-1/2 (A + I) D^-1/2. Symmetric, so it is its own transpose."""

    num_nodes: int
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def dense(self) -> np.ndarray:
        A = np.zeros((self.num_nodes, self.num_nodes))
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        A[rows, self.indices] = self.weights
        return A

    def weight(self, o: int, j: int) -> float:
        nbrs = self.indices[self.indptr[o] : self.indptr[o + 1]]
        hit = np.nonzero(nbrs == j)[0]
        return float(self.weights[self.indptr[o] + hit[0]]) if hit.size else 0.0


def normalize(g: SparseGraph) -> NormalizedAdjacency:
    """Add self-loops and apply symmetric degree normalization."""
    if not isinstance(g, SparseGraph):
        raise TypeError("normalize takes a raw SparseGraph")
    n = g.num_nodes
    counts = np.diff(g.indptr) + 1
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    rows = np.repeat(np.arange(n), np.diff(g.indptr))
    # merge neighbor lists with the self index, keeping columns sorted per row
    all_rows = np.concatenate([rows, np.arange(n)])
    all_cols = np.concatenate([g.indices, np.arange(n)])
    order = np.lexsort((all_cols, all_rows))
    indices = np.ascontiguousarray(all_cols[order], dtype=np.int64)
    weights = _kernels.sym_norm_weights(indptr, indices)
    return NormalizedAdjacency(n, indptr, indices, weights)


def propagate(adj: NormalizedAdjacency, H) -> np.ndarray:
    """Row o of the result is sum_j w_oj H[j]."""
    H = as_matrix(H, "H")
    if H.shape[0] != adj.num_nodes:
        raise ShapeError(f"H has {H.shape[0]} rows, graph has {adj.num_nodes} nodes")
    return _kernels.csr_spmm(adj.indptr, adj.indices, adj.weights, H)


# ---------------------------------------------------------------- tasks


SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST, SPLIT_NONE = 0, 1, 2, -1


@dataclass(frozen=True)
class TaskGraph:
    task_id: int
    classes: tuple[int, ...]
    node_ids: np.ndarray  # global node index of each local node
    features: np.ndarray
    graph: SparseGraph
    norm_adj: NormalizedAdjacency
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    @property
    def num_nodes(self) -> int:
        return int(self.node_ids.shape[0])

    def mask(self, split: str) -> np.ndarray:
        return {"train": self.train_mask, "val": self.val_mask, "test": self.test_mask}[split]

    def class_counts(self, split: str = "train") -> dict[int, int]:
        m = self.mask(split)
        return {c: int(np.sum(self.labels[m] == c)) for c in self.classes}


@dataclass(frozen=True)
class GlobalTestGraph:
    """Union of the seen task graphs with every source edge among their nodes."""

    node_ids: np.ndarray
    node_task: np.ndarray  # originating task index per node
    features: np.ndarray
    graph: SparseGraph
    norm_adj: NormalizedAdjacency
    labels: np.ndarray
    eval_mask: np.ndarray
    split: str = "test"

    @property
    def num_nodes(self) -> int:
        return int(self.node_ids.shape[0])

    @property
    def test_mask(self) -> np.ndarray:
        return self.eval_mask


def _subgraph(dataset: RawDataset, node_ids: np.ndarray) -> SparseGraph:
    local = np.full(dataset.num_nodes, -1, dtype=np.int64)
    local[node_ids] = np.arange(node_ids.shape[0])
    e = dataset.edges
    keep = (local[e[:, 0]] >= 0) & (local[e[:, 1]] >= 0)
    return SparseGraph.from_edges(node_ids.shape[0], local[e[keep]])


def induce_task_subgraph(
    dataset: RawDataset,
    class_set: Sequence[int],
    split: np.ndarray | None = None,
    task_id: int = 0,
    assigned: Sequence[int] = (),
) -> TaskGraph:
    """Nodes whose label is in ``class_set`` and only the edges among them.

    ``split`` is a per-node code array (0 train, 1 val, 2 test); when omitted
    a 6:2:2 split with seed 0 is drawn. ``assigned`` lists classes already
    used by earlier tasks and must not intersect ``class_set``.
    """
    classes = tuple(sorted(int(c) for c in class_set))
    if not classes:
        raise ValueError("class_set is empty")
    unknown = [c for c in classes if not 0 <= c < dataset.class_count]
    if unknown:
        raise KeyError(f"unknown class id(s) {unknown}")
    overlap = set(classes) & {int(c) for c in assigned}
    if overlap:
        raise ValueError(f"classes {sorted(overlap)} already assigned to an earlier task")
    if split is None:
        from .datasets import split_nodes

        split = split_nodes(dataset.labels, (0.6, 0.2, 0.2), seed=0)
    node_ids = np.nonzero(np.isin(dataset.labels, classes))[0].astype(np.int64)
    g = _subgraph(dataset, node_ids)
    codes = split[node_ids]
    return TaskGraph(
        task_id=int(task_id),
        classes=classes,
        node_ids=node_ids,
        features=np.ascontiguousarray(dataset.features[node_ids]),
        graph=g,
        norm_adj=normalize(g),
        labels=dataset.labels[node_ids].copy(),
        train_mask=codes == SPLIT_TRAIN,
        val_mask=codes == SPLIT_VAL,
        test_mask=codes == SPLIT_TEST,
    )


def build_global_test_graph(
    dataset: RawDataset, tasks_seen: Sequence[TaskGraph], split: str = "test"
) -> GlobalTestGraph:
    """Consolidate the seen tasks into one graph that keeps inter-task edges.

    All nodes of the seen tasks enter the topology; only nodes in the chosen
    split (``"test"`` or ``"val"``) are evaluation targets.
    """
    if not tasks_seen:
        raise ValueError("tasks_seen is empty")
    node_ids = np.concatenate([t.node_ids for t in tasks_seen])
    node_task = np.concatenate([np.full(t.num_nodes, t.task_id, dtype=np.int64) for t in tasks_seen])
    mask = np.concatenate([t.mask(split) for t in tasks_seen])
    g = _subgraph(dataset, node_ids)
    return GlobalTestGraph(
        node_ids=node_ids,
        node_task=node_task,
        features=np.ascontiguousarray(dataset.features[node_ids]),
        graph=g,
        norm_adj=normalize(g),
        labels=dataset.labels[node_ids].copy(),
        eval_mask=mask,
        split=split,
    )
