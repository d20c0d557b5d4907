import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_edges(rng, n, p):
    return [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]


def tiny_config(**kw):
    """Small, fast experiment config for pipeline tests."""
    from adrgraph.config import ExperimentConfig

    c = ExperimentConfig()
    c.dataset.sbm.blocks = [30] * 6
    c.dataset.sbm.p_intra = 0.15
    c.dataset.sbm.p_inter = 0.01
    c.dataset.sbm.feature_dim = 8
    c.dataset.sbm.feature_shift = 3.0
    c.model.hidden_dims = [16, 16]
    c.training.epochs = 30
    c.alpha = 2
    for k, v in kw.items():
        setattr(c, k, v)
    return c


def random_task_graph(rng, n, d, task_id=0, classes=(0, 1), p=0.3):
    """A standalone task graph with random topology, features and labels."""
    from adrgraph.graph import SparseGraph, TaskGraph, normalize

    g = SparseGraph.from_edges(n, random_edges(rng, n, p))
    labels = rng.choice(classes, n)
    train = rng.random(n) < 0.6
    return TaskGraph(
        task_id=task_id,
        classes=tuple(classes),
        node_ids=np.arange(n),
        features=rng.standard_normal((n, d)),
        graph=g,
        norm_adj=normalize(g),
        labels=labels,
        train_mask=train,
        val_mask=~train,
        test_mask=np.zeros(n, bool),
    )


def random_merge_instance(seed, max_tasks=4, max_nodes=50, max_dim=16):
    """Task sequence with independently drawn task encoders sharing one architecture."""
    from adrgraph.encoder import GcnModel

    r = np.random.default_rng(seed)
    n_tasks = int(r.integers(1, max_tasks + 1))
    K = int(r.integers(1, 4))
    dims = [int(r.integers(2, max_dim + 1)) for _ in range(K + 1)]
    tasks, models = [], []
    for t in range(n_tasks):
        n = int(r.integers(2, max_nodes + 1))
        tasks.append(random_task_graph(r, n, dims[0], t, (2 * t, 2 * t + 1)))
        m = GcnModel.init(dims[0], dims[1:], (), 0.5, seed=int(r.integers(2**31)))
        models.append(m)
    gamma = float(10.0 ** r.uniform(-3, 0))
    return tasks, models, gamma
