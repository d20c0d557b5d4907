import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adrgraph.encoder import GcnModel
from adrgraph.evaluate import (
    as_performance_matrix,
    avg_incremental_accuracy,
    class_skew,
    drift_between,
    dump_metrics,
    final_accuracy,
    learning_accuracy,
    matrix_from_csv,
    matrix_to_csv,
    measure_drift,
    metrics_dict,
    per_task_accuracy,
)
from conftest import random_task_graph
from oracles import scalar_avg_incremental, scalar_final, scalar_learning


def _random_lower(r, N):
    return [[float(r.random()) for _ in range(t + 1)] for t in range(N)]


WORKED = [[1.0], [0.8, 0.9]]


def test_worked_example():
    assert np.allclose(per_task_accuracy(WORKED), [1.0, 0.85])
    assert abs(avg_incremental_accuracy(WORKED) - 0.925) < 1e-15
    assert abs(final_accuracy(WORKED) - 0.85) < 1e-15
    assert abs(learning_accuracy(WORKED) - 0.95) < 1e-15


def test_all_ones_and_zero_last_row():
    ones = [[1.0] * (t + 1) for t in range(4)]
    assert avg_incremental_accuracy(ones) == 1.0 and learning_accuracy(ones) == 1.0
    assert final_accuracy([[0.5], [0.0, 0.0]]) == 0.0


@given(st.integers(1, 12), st.integers(0, 2**31))
def test_metrics_match_scalar_loops(N, seed):
    M = _random_lower(np.random.default_rng(seed), N)
    assert abs(avg_incremental_accuracy(M) - scalar_avg_incremental(M)) <= 1e-15
    assert abs(final_accuracy(M) - scalar_final(M)) <= 1e-15
    assert abs(learning_accuracy(M) - scalar_learning(M)) <= 1e-15
    for v in (avg_incremental_accuracy(M), final_accuracy(M), learning_accuracy(M)):
        assert 0.0 <= v <= 1.0


def test_upper_triangle_ignored():
    M = np.array([[0.5, 123.0], [0.2, 0.4]])
    A = as_performance_matrix(M)
    assert np.isnan(A[0, 1]) and learning_accuracy(M) == 0.45


def test_invalid_matrices():
    with pytest.raises(ValueError):
        as_performance_matrix([])
    with pytest.raises(ValueError):
        as_performance_matrix(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        as_performance_matrix([[1.5]])


def test_csv_roundtrip_and_format():
    text = matrix_to_csv(WORKED)
    assert text.splitlines()[0] == ",t0,t1"
    assert text.splitlines()[1] == "t0,1.0,"
    back = matrix_from_csv(text)
    assert back[1, 0] == 0.8 and back[1, 1] == 0.9 and np.isnan(back[0, 1])


@given(st.integers(1, 8), st.integers(0, 2**31))
def test_csv_roundtrip_bit_exact(N, seed):
    M = as_performance_matrix(_random_lower(np.random.default_rng(seed), N))
    back = matrix_from_csv(matrix_to_csv(M))
    assert np.array_equal(np.nan_to_num(back, nan=-1), np.nan_to_num(M, nan=-1))


def test_metrics_json_keys_and_determinism():
    m = metrics_dict(WORKED, [1.0, 3.0], {"mean_normalized": 0.1, "base_final_normalized": 0.2})
    assert set(m) == {"A_avg", "A_f", "A_l", "per_task_A_t", "rho_t", "drift"}
    assert dump_metrics(m) == dump_metrics(metrics_dict(WORKED, [1.0, 3.0], m["drift"]))
    assert abs(json.loads(dump_metrics(m))["A_f"] - 0.85) < 1e-15


def test_incomplete_matrix_reports_final_only():
    M = np.full((2, 2), np.nan)
    M[1] = [0.7, 0.9]
    m = metrics_dict(M, complete=False)
    assert m["A_avg"] is None and m["A_l"] is None and abs(m["A_f"] - 0.8) < 1e-15


# ------------------------------------------------------------------ skew


def test_class_skew_examples():
    assert class_skew({0: 10, 1: 10}) == 1.0
    assert class_skew({0: 30, 1: 10}) == 3.0
    with pytest.raises(ValueError):
        class_skew({0: 3, 1: 0})


# ----------------------------------------------------------------- drift


def test_drift_zero_on_diagonal_and_for_identical_encoders(rng):
    tasks = [random_task_graph(rng, 12, 4, t) for t in range(3)]
    m = GcnModel.init(4, [5, 5], (), seed=0)
    rep = measure_drift([m, m.copy(), m.copy()], tasks)
    assert np.all(np.diag(rep.mean_l2) == 0.0)
    assert rep.mean_normalized == 0.0 and rep.base_final_normalized == 0.0


def test_drift_positive_when_encoder_changes(rng):
    t = random_task_graph(rng, 12, 4)
    a = GcnModel.init(4, [5], (), seed=0)
    b = GcnModel.init(4, [5], (), seed=1)
    d, nd = drift_between(a, b, t)
    assert d > 0 and nd > 0
    rep = measure_drift([a, b], [t, t])
    assert rep.mean_l2[0, 1] == d and np.isnan(rep.mean_l2[1, 0])
    assert rep.pairs() == [(0, 1)]
    assert json.dumps(rep.to_dict())


def test_drift_missing_checkpoint(rng):
    t = random_task_graph(rng, 5, 2)
    with pytest.raises(ValueError):
        measure_drift([GcnModel.init(2, [3])], [t, t])
