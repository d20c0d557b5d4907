"""Time the numba and pure-numpy kernel backends side by side.

    python3 benchmarks/bench_kernels.py [--nodes 20000] [--degree 10] [--width 128] [--repeat 5]

Prints one row per workload with the best-of-N time for each backend and the
speedup. The first numba call is a warm-up so JIT compilation is not timed.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from adrgraph import _kernels
from adrgraph.config import ExperimentConfig
from adrgraph.continual import load_source, task_stream
from adrgraph.encoder import GcnModel, backward, forward_tapped
from adrgraph.graph import SparseGraph, normalize, propagate


def random_graph(n: int, degree: float, seed: int) -> SparseGraph:
    r = np.random.default_rng(seed)
    m = int(n * degree / 2)
    edges = r.integers(0, n, size=(m, 2))
    return SparseGraph.from_edges(n, edges)


def best_of(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        tic = time.perf_counter()
        fn()
        times.append(time.perf_counter() - tic)
    return min(times)


def compare(name: str, fn, repeat: int) -> dict:
    row = {"workload": name}
    for flag in (True, False):
        _kernels.use_numba(flag)
        row[_kernels.backend_name()] = best_of(fn, repeat)
    return row


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=20000)
    ap.add_argument("--degree", type=float, default=10.0)
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    prev = _kernels.use_numba()

    g = random_graph(args.nodes, args.degree, 0)
    adj = normalize(g)
    H = np.random.default_rng(1).standard_normal((args.nodes, args.width))

    cfg = ExperimentConfig()
    ds = load_source(cfg)
    task = task_stream(cfg, ds)[0]
    model = GcnModel.init(ds.feature_dim, cfg.model.hidden_dims, task.classes, cfg.model.dropout, seed=0)

    def epoch():
        tape = forward_tapped(model, task, train_mode=True, rng=np.random.default_rng(0))
        backward(model, task, tape)

    rows = [
        compare(f"normalize n={args.nodes} nnz={adj.indices.shape[0]}", lambda: normalize(g), args.repeat),
        compare(f"propagate n={args.nodes} width={args.width}", lambda: propagate(adj, H), args.repeat),
        compare(f"train step, task 0 ({task.num_nodes} nodes)", epoch, args.repeat),
    ]
    _kernels.use_numba(prev)

    print(f"{'workload':<44} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for r in rows:
        print(f"{r['workload']:<44} {1e3 * r['numba']:>10.2f} {1e3 * r['numpy']:>10.2f} {r['numpy'] / r['numba']:>7.2f}x")


if __name__ == "__main__":
    main()
