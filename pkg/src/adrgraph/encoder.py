"""GCN encoder + linear head: tapped forward, exact backward, Adam adaptation.

Layer k computes ``H_k = Ahat_k W_k`` with ``Ahat_k = propagate(adj, Z_{k-1})``,
``Z_{-1} = X`` and ``Z_k = dropout(relu(H_k))``. The head is
``logits = Z_{K-1} W_phi``. There are no bias terms, so every layer is a pure
linear map of its aggregated input, which is what the merge step regresses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import propagate
from .linalg import ShapeError, load_matrix, save_matrix


@dataclass
class GcnModel:
    layer_weights: list[np.ndarray]
    classifier_weights: np.ndarray
    classes: list[int] = field(default_factory=list)  # class id of each head column
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        for a, b in zip(self.layer_weights, self.layer_weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ShapeError(f"layer dims do not chain: {a.shape} then {b.shape}")
        if self.classifier_weights.shape != (self.out_dim, len(self.classes)):
            raise ShapeError(
                f"classifier is {self.classifier_weights.shape}, expected "
                f"{(self.out_dim, len(self.classes))}"
            )

    @classmethod
    def init(
        cls,
        in_dim: int,
        hidden_dims: Sequence[int] = (128, 128),
        classes: Sequence[int] = (),
        dropout: float = 0.5,
        seed: int = 0,
    ) -> GcnModel:
        """Uniform(-1/sqrt(d_in), 1/sqrt(d_in)) layers, zero head."""
        rng = np.random.default_rng(seed)
        dims = [int(in_dim), *(int(h) for h in hidden_dims)]
        layers = []
        for d_in, d_out in zip(dims, dims[1:]):
            bound = 1.0 / np.sqrt(d_in)
            layers.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        head = np.zeros((dims[-1], len(classes)))
        return cls(layers, head, [int(c) for c in classes], float(dropout), int(seed))

    @property
    def num_layers(self) -> int:
        return len(self.layer_weights)

    @property
    def in_dim(self) -> int:
        return self.layer_weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layer_weights[-1].shape[1]

    def dims(self) -> list[int]:
        return [self.in_dim] + [w.shape[1] for w in self.layer_weights]

    def copy(self) -> GcnModel:
        return GcnModel(
            [w.copy() for w in self.layer_weights],
            self.classifier_weights.copy(),
            list(self.classes),
            self.dropout,
            self.seed,
        )

    def with_encoder(self, layer_weights: Sequence[np.ndarray]) -> GcnModel:
        return GcnModel(
            [np.array(w, dtype=np.float64) for w in layer_weights],
            self.classifier_weights.copy(),
            list(self.classes),
            self.dropout,
            self.seed,
        )

    def add_classes(self, new: Sequence[int]) -> GcnModel:
        """Copy with zero-initialized head columns for classes not yet present."""
        fresh = [int(c) for c in new if int(c) not in self.classes]
        m = self.copy()
        if fresh:
            m.classifier_weights = np.hstack([m.classifier_weights, np.zeros((self.out_dim, len(fresh)))])
            m.classes.extend(fresh)
        return m

    def columns(self, class_ids: Sequence[int]) -> np.ndarray:
        pos = {c: j for j, c in enumerate(self.classes)}
        try:
            return np.array([pos[int(c)] for c in class_ids], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"class {exc.args[0]} has no head column") from None

    def params(self) -> list[np.ndarray]:
        return [*self.layer_weights, self.classifier_weights]

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        self.layer_weights = list(params[:-1])
        self.classifier_weights = params[-1]


@dataclass
class TappedForward:
    agg_inputs: list[np.ndarray]  # Ahat_k
    pre_acts: list[np.ndarray]  # H_k = Ahat_k W_k
    dropout_masks: list[np.ndarray | None]  # scaled keep masks, None in eval mode
    layer_outputs: list[np.ndarray]  # Z_k, what feeds layer k+1 / the head
    embeddings: np.ndarray  # relu(H_{K-1}) without dropout
    logits: np.ndarray
    train_mode: bool


def forward_tapped(
    model: GcnModel,
    graph,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    dropout_masks: Sequence[np.ndarray] | None = None,
) -> TappedForward:
    """Full forward pass recording every layer's (aggregated input, pre-activation).

    ``graph`` is anything with ``features`` and ``norm_adj``. In train mode the
    dropout masks come from ``dropout_masks`` when given, else from ``rng``.
    """
    X = graph.features
    if X.shape[1] != model.in_dim:
        raise ShapeError(f"features have {X.shape[1]} columns, first layer expects {model.in_dim}")
    use_dropout = train_mode and model.dropout > 0.0
    if use_dropout and dropout_masks is None and rng is None:
        raise ValueError("train-mode forward needs an rng or explicit dropout masks")
    keep = 1.0 - model.dropout
    Z = X
    agg, pre, masks, outs = [], [], [], []
    for k, W in enumerate(model.layer_weights):
        Ahat = propagate(graph.norm_adj, Z)
        H = Ahat @ W
        A = np.maximum(H, 0.0)
        if use_dropout:
            if dropout_masks is not None:
                mask = dropout_masks[k]
            else:
                mask = (rng.random(A.shape) < keep) / keep
            Z = A * mask
        else:
            mask = None
            Z = A
        agg.append(Ahat)
        pre.append(H)
        masks.append(mask)
        outs.append(Z)
    embeddings = np.maximum(pre[-1], 0.0)
    logits = Z @ model.classifier_weights
    return TappedForward(agg, pre, masks, outs, embeddings, logits, bool(train_mode))


def embed(model: GcnModel, graph) -> np.ndarray:
    """Eval-mode final post-activation embeddings."""
    return forward_tapped(model, graph, train_mode=False).embeddings


def _restricted(logits, labels, mask, column_ids):
    if not np.any(mask):
        raise ValueError("loss mask is empty")
    rows = np.nonzero(mask)[0]
    Z = logits[np.ix_(rows, column_ids)]
    return rows, Z


def _target_positions(labels, rows, active_classes):
    pos = {int(c): j for j, c in enumerate(active_classes)}
    try:
        return np.array([pos[int(y)] for y in labels[rows]], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} is not among the active classes") from None


def _log_softmax(Z):
    m = Z.max(axis=1, keepdims=True)
    S = Z - m
    return S - np.log(np.exp(S).sum(axis=1, keepdims=True))


def cross_entropy_loss(
    logits: np.ndarray,
    labels: np.ndarray,
    mask: np.ndarray,
    column_ids: Sequence[int] | None = None,
    active_classes: Sequence[int] | None = None,
) -> float:
    """Mean -log softmax of the true class over masked rows.

    Only logits columns ``column_ids`` (the current task's classes, in the
    order of ``active_classes``) enter the softmax. Defaults: all columns,
    labels already column indices.
    """
    if column_ids is None:
        column_ids = np.arange(logits.shape[1])
    if active_classes is None:
        active_classes = list(range(len(column_ids)))
    rows, Z = _restricted(logits, labels, mask, np.asarray(column_ids))
    tgt = _target_positions(labels, rows, active_classes)
    logp = _log_softmax(Z)
    return float(-np.mean(logp[np.arange(rows.shape[0]), tgt]))


def _loss_grad_logits(logits, labels, mask, column_ids, active_classes):
    rows, Z = _restricted(logits, labels, mask, column_ids)
    tgt = _target_positions(labels, rows, active_classes)
    P = np.exp(_log_softmax(Z))
    P[np.arange(rows.shape[0]), tgt] -= 1.0
    P /= rows.shape[0]
    G = np.zeros_like(logits)
    G[np.ix_(rows, column_ids)] = P
    return G


def backward(
    model: GcnModel,
    graph,
    tapped: TappedForward,
    labels: np.ndarray | None = None,
    mask: np.ndarray | None = None,
    active_classes: Sequence[int] | None = None,
) -> list[np.ndarray]:
    """Exact gradients of the masked cross-entropy w.r.t. ``[W_0, ..., W_{K-1}, W_phi]``.

    ``labels``, ``mask`` and ``active_classes`` default to the task graph's
    labels, train mask and class set.
    """
    if tapped.train_mode and model.dropout > 0.0 and any(m is None for m in tapped.dropout_masks):
        raise ValueError("train-mode tape is missing dropout masks")
    labels = graph.labels if labels is None else labels
    mask = graph.train_mask if mask is None else mask
    active = list(graph.classes if active_classes is None else active_classes)
    cols = model.columns(active)

    G = _loss_grad_logits(tapped.logits, labels, mask, cols, active)
    grads: list[np.ndarray] = [None] * (model.num_layers + 1)  # type: ignore[list-item]
    grads[-1] = tapped.layer_outputs[-1].T @ G
    dZ = G @ model.classifier_weights.T
    for k in range(model.num_layers - 1, -1, -1):
        m = tapped.dropout_masks[k]
        dA = dZ * m if m is not None else dZ
        dH = dA * (tapped.pre_acts[k] > 0.0)
        grads[k] = tapped.agg_inputs[k].T @ dH
        if k > 0:
            # normalized adjacency is symmetric, so A^T g = propagate(adj, g)
            dZ = propagate(graph.norm_adj, dH @ model.layer_weights[k].T)
    return grads


# ------------------------------------------------------------------ Adam


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[i] / c1
            vhat = self.v[i] / c2
            out.append(p - self.lr * mhat / (np.sqrt(vhat) + self.eps))
        return out


@dataclass(frozen=True)
class AdaptConfig:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 2000
    seed: int = 0


def fit(
    model: GcnModel,
    graph,
    labels: np.ndarray,
    train_idx: np.ndarray,
    active_classes: Sequence[int],
    config: AdaptConfig,
) -> tuple[GcnModel, list[float]]:
    """Adam on mini-batches of ``train_idx``; the forward always covers the whole graph."""
    if train_idx.shape[0] == 0:
        raise ValueError("no training nodes")
    model = model.add_classes(active_classes)
    batch_rng, drop_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2))
    opt = Adam(config.lr)
    history = []
    n = graph.features.shape[0]
    for _ in range(config.epochs):
        order = train_idx[batch_rng.permutation(train_idx.shape[0])]
        for lo in range(0, order.shape[0], config.batch_size):
            batch = np.zeros(n, dtype=bool)
            batch[order[lo : lo + config.batch_size]] = True
            tape = forward_tapped(model, graph, train_mode=True, rng=drop_rng)
            grads = backward(model, graph, tape, labels, batch, active_classes)
            history.append(
                cross_entropy_loss(tape.logits, labels, batch, model.columns(active_classes), active_classes)
            )
            model.set_params(opt.step(model.params(), grads))
    return model, history


def adapt_task(
    model: GcnModel, task_graph, config: AdaptConfig, loss_classes: Sequence[int] | None = None
) -> GcnModel:
    """Fine-tune on one task's training nodes.

    The softmax covers the task's own classes unless ``loss_classes`` widens it
    (it must include them). Columns outside the softmax get no gradient.
    """
    train_idx = np.nonzero(task_graph.train_mask)[0]
    classes = list(task_graph.classes) if loss_classes is None else list(loss_classes)
    if not set(task_graph.classes) <= set(classes):
        raise ValueError("loss_classes must include every class of the task")
    trained, _ = fit(model, task_graph, task_graph.labels, train_idx, classes, config)
    return trained


def predict_head(model: GcnModel, graph) -> np.ndarray:
    """Class ids from the back-propagated head (argmax, ties to the lowest class id)."""
    logits = forward_tapped(model, graph, train_mode=False).logits
    order = np.argsort(model.classes, kind="stable")
    cls = np.asarray(model.classes)[order]
    return cls[np.argmax(logits[:, order], axis=1)]


def accuracy(pred: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    if not np.any(mask):
        return float("nan")
    return float(np.mean(pred[mask] == labels[mask]))


# ------------------------------------------------------------- checkpoint


def save_model(model: GcnModel, dir_path) -> None:
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    for k, W in enumerate(model.layer_weights):
        save_matrix(root / f"W_{k}.bin", W)
    save_matrix(root / "W_phi.bin", model.classifier_weights)
    manifest = {
        "layer_dims": model.dims(),
        "activation": "relu",
        "dropout": model.dropout,
        "seed": model.seed,
        "classes": model.classes,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_model(dir_path) -> GcnModel:
    root = Path(dir_path)
    manifest = json.loads((root / "manifest.json").read_text())
    K = len(manifest["layer_dims"]) - 1
    layers = [load_matrix(root / f"W_{k}.bin") for k in range(K)]
    return GcnModel(
        layers,
        load_matrix(root / "W_phi.bin"),
        [int(c) for c in manifest["classes"]],
        float(manifest["dropout"]),
        int(manifest["seed"]),
    )
