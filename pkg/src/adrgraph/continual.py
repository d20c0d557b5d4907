"""Task-stream orchestration: the analytic merge-and-reconstruct learner and the reference baselines.

Learners see one :class:`~adrgraph.graph.TaskGraph` at a time through
``learn`` and are evaluated by the harness on the consolidated test graph of
all tasks seen so far. Only the harness holds the task stream; a learner may
keep nothing but weights and (R, Q) banks once ``learn`` returns.
"""

from __future__ import annotations

import copy
import gc
import hashlib
import json
import logging
import time
import types
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import acr, ham
from .config import ExperimentConfig
from .datasets import RawDataset, SbmSpec, TaskStreamSpec, build_task_stream, generate_sbm, load_dataset
from .encoder import AdaptConfig, GcnModel, adapt_task, embed, fit, predict_head, save_model
from .evaluate import class_skew, dump_metrics, measure_drift, metrics_dict, write_matrix_csv
from .graph import GlobalTestGraph, TaskGraph, build_global_test_graph
from .linalg import matrix_to_bytes

log = logging.getLogger(__name__)


class NonExemplarViolation(AssertionError):
    """A learner kept data-sized state from an earlier task."""


def task_seed(base: int, task_id: int) -> int:
    return int(np.random.SeedSequence([int(base), int(task_id)]).generate_state(1)[0])


def adapt_config(cfg: ExperimentConfig, task_id: int) -> AdaptConfig:
    lr = cfg.training.lr_base if task_id == 0 else cfg.training.lr_incremental
    return AdaptConfig(lr, cfg.training.epochs, cfg.training.batch_size, task_seed(cfg.seeds.dropout, task_id))


def init_model(cfg: ExperimentConfig, in_dim: int) -> GcnModel:
    return GcnModel.init(in_dim, cfg.model.hidden_dims, (), cfg.model.dropout, cfg.seeds.init)


# --------------------------------------------------------------- learners


class AdrLearner:
    """Adapt freely, merge layer-wise in closed form, rebuild the head analytically."""

    name = "adr"

    def __init__(self, cfg: ExperimentConfig, in_dim: int):
        self.cfg = cfg
        self.gamma = cfg.gamma
        self.model = init_model(cfg, in_dim)  # adapted model, carries the back-propagated head
        self.merged: GcnModel | None = None
        self.encoder_bank = ham.EncoderMemoryBank.empty(self.model.dims())
        self.buffer = acr.FeatureBuffer.create(self.model.out_dim, cfg.alpha, cfg.seeds.buffer)
        self.classifier_bank = acr.ClassifierMemoryBank.empty(self.buffer.out_dim)
        self.W_phi: np.ndarray | None = None
        self.tasks_learned = 0

    def learn(self, task: TaskGraph, oracle: ham.JointOracleCache | None = None) -> None:
        start = self.model if self.merged is None else self.model.with_encoder(self.merged.layer_weights)
        adapted = adapt_task(start, task, adapt_config(self.cfg, task.task_id))

        stats = ham.collect_layer_statistics(adapted, task)
        if oracle is not None:
            oracle.add(stats)
        self.encoder_bank = ham.update_bank(self.encoder_bank, stats)
        del stats
        merged = ham.merge(self.encoder_bank, self.gamma, template_model=adapted)

        rows = task.train_mask
        B = acr.expand(self.buffer, embed(merged, task)[rows])
        Y = acr.one_hot(task.labels[rows], task.classes)
        self.classifier_bank = acr.update_classifier_bank(self.classifier_bank, B, Y, task.classes)
        self.W_phi = acr.reconstruct_classifier(self.classifier_bank, self.gamma)

        self.model = adapted
        self.merged = merged
        self.tasks_learned += 1

    def predict(self, graph) -> np.ndarray:
        return acr.predict(self.merged, self.buffer, self.W_phi, graph, self.classifier_bank.seen_classes)

    def encoder(self) -> GcnModel:
        return self.merged

    def allowed_arrays(self) -> list[np.ndarray]:
        out = [*self.model.params(), *self.encoder_bank.arrays(), *self.classifier_bank.arrays()]
        if self.merged is not None:
            out += self.merged.params()
        if self.buffer.weights is not None:
            out.append(self.buffer.weights)
        if self.W_phi is not None:
            out.append(self.W_phi)
        return out

    def save(self, root: Path) -> None:
        ham.save_encoder_bank(self.encoder_bank, root / "encoder_bank", self.gamma)
        acr.save_classifier_bank(self.classifier_bank, self.buffer, root / "classifier_bank", self.gamma)
        save_model(self.merged, root / "merged_model")

    def checksums(self) -> dict:
        return {
            "encoder_bank": _digest(self.encoder_bank.arrays()),
            "classifier_bank": _digest(self.classifier_bank.arrays()),
        }


class BareLearner:
    """Sequential fine-tuning with the back-propagated head; nothing protects old tasks."""

    name = "bare"

    def __init__(self, cfg: ExperimentConfig, in_dim: int):
        self.cfg = cfg
        self.model = init_model(cfg, in_dim)
        self.tasks_learned = 0

    def learn(self, task: TaskGraph) -> None:
        # the head is the predictor here, so the softmax spans every class seen so far
        seen = sorted(set(self.model.classes) | set(task.classes))
        self.model = adapt_task(self.model, task, adapt_config(self.cfg, task.task_id), loss_classes=seen)
        self.tasks_learned += 1

    def predict(self, graph) -> np.ndarray:
        return predict_head(self.model, graph)

    def encoder(self) -> GcnModel:
        return self.model

    def allowed_arrays(self) -> list[np.ndarray]:
        return self.model.params()

    def save(self, root: Path) -> None:
        save_model(self.model, root / "model")

    def checksums(self) -> dict:
        return {"model": _digest(self.model.params())}


class FrozenAnalyticLearner:
    """Adapt on the base task only, then freeze the encoder and grow an analytic head."""

    name = "frozen_analytic"

    def __init__(self, cfg: ExperimentConfig, in_dim: int):
        self.cfg = cfg
        self.gamma = cfg.gamma
        self.model = init_model(cfg, in_dim)
        self.buffer = acr.FeatureBuffer.create(self.model.out_dim, cfg.alpha, cfg.seeds.buffer)
        self.classifier_bank = acr.ClassifierMemoryBank.empty(self.buffer.out_dim)
        self.W_phi: np.ndarray | None = None
        self.tasks_learned = 0

    def learn(self, task: TaskGraph) -> None:
        if self.tasks_learned == 0:
            self.model = adapt_task(self.model, task, adapt_config(self.cfg, task.task_id))
        rows = task.train_mask
        B = acr.expand(self.buffer, embed(self.model, task)[rows])
        Y = acr.one_hot(task.labels[rows], task.classes)
        self.classifier_bank = acr.update_classifier_bank(self.classifier_bank, B, Y, task.classes)
        self.W_phi = acr.reconstruct_classifier(self.classifier_bank, self.gamma)
        self.tasks_learned += 1

    def predict(self, graph) -> np.ndarray:
        return acr.predict(self.model, self.buffer, self.W_phi, graph, self.classifier_bank.seen_classes)

    def encoder(self) -> GcnModel:
        return self.model

    def allowed_arrays(self) -> list[np.ndarray]:
        out = [*self.model.params(), *self.classifier_bank.arrays()]
        if self.buffer.weights is not None:
            out.append(self.buffer.weights)
        if self.W_phi is not None:
            out.append(self.W_phi)
        return out

    def save(self, root: Path) -> None:
        acr.save_classifier_bank(self.classifier_bank, self.buffer, root / "classifier_bank", self.gamma)
        save_model(self.model, root / "model")

    def checksums(self) -> dict:
        return {"classifier_bank": _digest(self.classifier_bank.arrays())}


LEARNERS = {"adr": AdrLearner, "bare": BareLearner, "frozen_analytic": FrozenAnalyticLearner}


def _digest(arrays: Sequence[np.ndarray]) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(matrix_to_bytes(a if a.ndim == 2 else a.reshape(1, -1)))
    return h.hexdigest()


# ------------------------------------------------------------------ audit


_OPAQUE = (str, bytes, int, float, bool, type(None), type, types.ModuleType, types.FunctionType, logging.Logger)


def reachable_arrays(root) -> list[np.ndarray]:
    """Every ndarray reachable from ``root`` through object references."""
    seen: set[int] = set()
    found: dict[int, np.ndarray] = {}
    stack = [root]
    while stack:
        obj = stack.pop()
        if id(obj) in seen:
            continue
        seen.add(id(obj))
        if isinstance(obj, np.ndarray):
            found[id(obj)] = obj
            if obj.base is not None:
                stack.append(obj.base)
            continue
        if isinstance(obj, _OPAQUE):
            continue
        stack.extend(gc.get_referents(obj))
    return list(found.values())


def audit_retained_state(learner, prior_node_counts: Sequence[int]) -> list[str]:
    """Problems with what ``learner`` still references after finishing a task.

    Anything that is not a weight matrix or a bank matrix is reported, and so
    is any array whose leading dimension equals a prior task's node count.
    """
    allowed = {id(a) for a in learner.allowed_arrays()}
    counts = {int(c) for c in prior_node_counts}
    problems = []
    for a in reachable_arrays(learner):
        if id(a) in allowed or (a.base is not None and id(a.base) in allowed):
            continue
        if a.ndim == 0 or a.size <= 1:
            continue
        tag = " (matches a prior task's node count)" if a.shape[0] in counts else ""
        problems.append(f"unexpected array of shape {a.shape}{tag}")
    return problems


# ----------------------------------------------------------------- records


@dataclass
class RunRecord:
    method: str
    performance: np.ndarray
    task_seconds: list[float] = field(default_factory=list)
    checksums: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    rho: list[float] = field(default_factory=list)
    drift: dict | None = None
    error: str | None = None
    learner: object = field(default=None, repr=False, compare=False)

    @property
    def complete(self) -> bool:
        return self.method != "joint"

    def metrics(self) -> dict:
        return metrics_dict(self.performance, self.rho, self.drift and _drift_summary(self.drift), self.complete)

    def to_dict(self) -> dict:
        M = [[None if np.isnan(v) else float(v) for v in row[: t + 1]] for t, row in enumerate(self.performance)]
        return {
            "method": self.method,
            "performance_matrix": M,
            "task_seconds": self.task_seconds,
            "checksums": self.checksums,
            "config": self.config,
            "rho_t": self.rho,
            "drift": self.drift,
            "error": self.error,
        }

    def write(self, out_dir) -> None:
        root = Path(out_dir)
        root.mkdir(parents=True, exist_ok=True)
        write_matrix_csv(root / "performance_matrix.csv", self.performance)
        if self.error is None:
            (root / "metrics.json").write_text(dump_metrics(self.metrics()), encoding="utf-8")
        (root / "run_record.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _drift_summary(drift: dict) -> dict:
    return {k: drift[k] for k in ("mean_normalized", "base_final_normalized")}


# ------------------------------------------------------------------ runner


def load_source(cfg: ExperimentConfig) -> RawDataset:
    if cfg.dataset.kind == "files":
        return load_dataset(cfg.dataset.path)
    s = cfg.dataset.sbm
    return generate_sbm(SbmSpec(tuple(s.blocks), s.p_intra, s.p_inter, s.feature_dim, s.feature_shift, s.seed))


def task_stream(cfg: ExperimentConfig, ds: RawDataset) -> list[TaskGraph]:
    spec = TaskStreamSpec(
        cfg.stream.base_classes,
        cfg.stream.increment_classes,
        tuple(cfg.stream.split_ratio),
        cfg.seeds.split,
        cfg.stream.shuffle_classes,
    )
    return build_task_stream(ds, spec)


def evaluate_row(pred: np.ndarray, g: GlobalTestGraph, n_tasks: int) -> np.ndarray:
    row = np.full(n_tasks, np.nan)
    for i in range(n_tasks):
        m = g.eval_mask & (g.node_task == i)
        if np.any(m):
            row[i] = float(np.mean(pred[m] == g.labels[m]))
    return row


def run_continual(cfg: ExperimentConfig, ds: RawDataset | None = None, learner=None, on_task=None) -> RunRecord:
    """Drive a continual learner over the stream, filling the performance matrix row by row."""
    ds = load_source(cfg) if ds is None else ds
    tasks = task_stream(cfg, ds)
    N = len(tasks)
    learner = LEARNERS[cfg.method](cfg, ds.feature_dim) if learner is None else learner
    record = RunRecord(cfg.method, np.full((N, N), np.nan), config=cfg.to_dict())
    record.rho = [class_skew(t) for t in tasks]
    encoders, seen_counts = [], []
    try:
        for t, task in enumerate(tasks):
            tic = time.perf_counter()
            learner.learn(task)
            record.task_seconds.append(time.perf_counter() - tic)
            if cfg.debug.audit:
                problems = audit_retained_state(learner, seen_counts + [task.num_nodes])
                if problems:
                    raise NonExemplarViolation(f"after task {t}: " + "; ".join(problems))
            seen_counts.append(task.num_nodes)
            if cfg.debug.track_drift:
                encoders.append(learner.encoder().copy())
            g = build_global_test_graph(ds, tasks[: t + 1], cfg.eval_split)
            record.performance[t, : t + 1] = evaluate_row(learner.predict(g), g, t + 1)
            log.info("%s task %d/%d: row %s", cfg.method, t, N - 1, np.round(record.performance[t, : t + 1], 4))
            if on_task is not None:
                on_task(t, learner, record)
    except Exception as exc:
        record.error = f"{type(exc).__name__}: {exc}"
        if cfg.output_dir:
            record.write(cfg.output_dir)
        raise
    record.checksums = learner.checksums()
    if cfg.debug.track_drift:
        record.drift = measure_drift(encoders, tasks).to_dict()
    record.learner = learner
    return record


def run_adr(cfg: ExperimentConfig, ds: RawDataset | None = None) -> RunRecord:
    return run_continual(_as_method(cfg, "adr"), ds)


def run_bare(cfg: ExperimentConfig, ds: RawDataset | None = None) -> RunRecord:
    return run_continual(_as_method(cfg, "bare"), ds)


def run_frozen_analytic(cfg: ExperimentConfig, ds: RawDataset | None = None) -> RunRecord:
    return run_continual(_as_method(cfg, "frozen_analytic"), ds)


def run_joint(cfg: ExperimentConfig, ds: RawDataset | None = None) -> RunRecord:
    """One model on every task's training nodes over the consolidated graph; only the last row is filled."""
    cfg = _as_method(cfg, "joint")
    ds = load_source(cfg) if ds is None else ds
    tasks = task_stream(cfg, ds)
    N = len(tasks)
    record = RunRecord("joint", np.full((N, N), np.nan), config=cfg.to_dict())
    record.rho = [class_skew(t) for t in tasks]
    tic = time.perf_counter()
    train_graph = build_global_test_graph(ds, tasks, "train")
    classes = [c for t in tasks for c in t.classes]
    model, _ = fit(
        init_model(cfg, ds.feature_dim),
        train_graph,
        train_graph.labels,
        np.nonzero(train_graph.eval_mask)[0],
        classes,
        adapt_config(cfg, 0),
    )
    record.task_seconds.append(time.perf_counter() - tic)
    g = build_global_test_graph(ds, tasks, cfg.eval_split)
    record.performance[N - 1] = evaluate_row(predict_head(model, g), g, N)
    record.checksums = {"model": _digest(model.params())}
    record.learner = _JointHolder(model)
    return record


class _JointHolder:
    def __init__(self, model: GcnModel):
        self.model = model

    def save(self, root: Path) -> None:
        save_model(self.model, root / "model")


def _as_method(cfg: ExperimentConfig, method: str) -> ExperimentConfig:
    if cfg.method == method:
        return cfg
    c = copy.deepcopy(cfg)
    c.method = method
    return c


def run_experiment(cfg: ExperimentConfig, ds: RawDataset | None = None) -> RunRecord:
    runners = {"adr": run_adr, "bare": run_bare, "joint": run_joint, "frozen_analytic": run_frozen_analytic}
    return runners[cfg.method](cfg, ds)


def write_outputs(record: RunRecord, out_dir, checkpoints: bool = True) -> None:
    root = Path(out_dir)
    record.write(root)
    if checkpoints and getattr(record, "learner", None) is not None:
        record.learner.save(root / "checkpoints")
