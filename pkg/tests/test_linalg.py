import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from adrgraph.linalg import (
    RidgeProblem,
    ShapeError,
    SingularMatrixError,
    cross_accumulate,
    gram_accumulate,
    load_matrix,
    matrix_from_bytes,
    matrix_to_bytes,
    ridge_solve,
    save_matrix,
    spectral_sanity,
)
from oracles import gauss_jordan_inverse, ridge_objective, stacked_ridge

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# ----------------------------------------------------------- accumulation


def test_gram_identity():
    assert np.array_equal(gram_accumulate(np.zeros((2, 2)), np.eye(2)), np.eye(2))


def test_gram_rank_one_update():
    assert np.array_equal(gram_accumulate(np.eye(2), [[1.0, 0.0]]), [[2.0, 0.0], [0.0, 1.0]])


def test_gram_does_not_modify_input(rng):
    R = np.eye(3)
    before = R.copy()
    gram_accumulate(R, rng.standard_normal((4, 3)))
    assert np.array_equal(R, before)


def test_gram_chunked_equals_stacked(rng):
    X = rng.standard_normal((5, 3))
    R = gram_accumulate(gram_accumulate(np.zeros((3, 3)), X[:2]), X[2:])
    assert np.linalg.norm(R - X.T @ X) < 1e-12


def test_gram_result_exactly_symmetric(rng):
    R = gram_accumulate(np.zeros((7, 7)), rng.standard_normal((13, 7)))
    assert np.array_equal(R, R.T)


def test_gram_shape_errors():
    with pytest.raises(ShapeError):
        gram_accumulate(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        gram_accumulate(np.zeros((2, 3)), np.zeros((3, 3)))


def test_cross_identity_and_scaling():
    assert np.array_equal(cross_accumulate(np.zeros((2, 2)), np.eye(2), np.eye(2)), np.eye(2))
    assert np.array_equal(cross_accumulate(np.zeros((2, 2)), 2 * np.eye(2), np.eye(2)), 2 * np.eye(2))


def test_cross_chunked_equals_stacked(rng):
    X, T = rng.standard_normal((9, 4)), rng.standard_normal((9, 3))
    Q = np.zeros((4, 3))
    for lo, hi in [(0, 2), (2, 7), (7, 9)]:
        Q = cross_accumulate(Q, X[lo:hi], T[lo:hi])
    assert np.linalg.norm(Q - X.T @ T) < 1e-12


def test_cross_shape_errors():
    with pytest.raises(ShapeError):
        cross_accumulate(np.zeros((2, 2)), np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        cross_accumulate(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros((3, 2)))


def test_accumulation_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        gram_accumulate(np.zeros((1, 1)), [[np.inf]])


@given(
    hnp.arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 5)), elements=finite),
    st.lists(st.integers(0, 12), max_size=4),
)
def test_accumulation_commutes_with_any_partition(X, cuts):
    d = X.shape[1]
    T = X[:, :1] * 2.0 - 1.0
    edges = sorted({0, X.shape[0], *[min(c, X.shape[0]) for c in cuts]})
    R, Q = np.zeros((d, d)), np.zeros((d, 1))
    for lo, hi in zip(edges, edges[1:]):
        R = gram_accumulate(R, X[lo:hi])
        Q = cross_accumulate(Q, X[lo:hi], T[lo:hi])
    scale = max(1.0, np.linalg.norm(X.T @ X))
    assert np.linalg.norm(R - X.T @ X) <= 1e-12 * scale
    assert np.linalg.norm(Q - X.T @ T) <= 1e-12 * max(1.0, np.linalg.norm(X.T @ T))


# ------------------------------------------------------------------ solve


def test_ridge_examples():
    assert np.allclose(ridge_solve(RidgeProblem(np.eye(2), np.eye(2), 1.0)), 0.5 * np.eye(2), atol=0, rtol=1e-15)
    assert np.array_equal(ridge_solve(RidgeProblem(np.eye(2), np.eye(2), 0.0)), np.eye(2))


def test_ridge_matches_gauss_jordan_inverse(rng):
    B = rng.standard_normal((6, 6))
    R = B @ B.T + 0.5 * np.eye(6)
    Q = rng.standard_normal((6, 3))
    W = ridge_solve(RidgeProblem(R, Q, 0.0))
    assert np.linalg.norm(W - gauss_jordan_inverse(R) @ Q) < 1e-9


def test_ridge_residual_bound(rng):
    X = rng.standard_normal((40, 8))
    R, Q = X.T @ X, X.T @ rng.standard_normal((40, 5))
    for gamma in (1e-3, 1e-1, 1.0):
        W = ridge_solve(RidgeProblem(R, Q, gamma))
        res = np.linalg.norm((R + gamma * np.eye(8)) @ W - Q) / max(1.0, np.linalg.norm(Q))
        assert res < 1e-8


def test_ridge_is_minimizer_of_stacked_objective(rng):
    X, T = rng.standard_normal((30, 6)), rng.standard_normal((30, 2))
    gamma = 0.3
    W = ridge_solve(RidgeProblem(X.T @ X, X.T @ T, gamma))
    base = ridge_objective(X, T, W, gamma)
    for eps in (1e-3, 1e-4):
        for _ in range(10):
            D = rng.standard_normal(W.shape)
            assert ridge_objective(X, T, W + eps * D, gamma) >= base


def test_ridge_deterministic(rng):
    X = rng.standard_normal((20, 5))
    p = RidgeProblem(X.T @ X, X.T @ rng.standard_normal((20, 2)), 0.01)
    assert ridge_solve(p).tobytes() == ridge_solve(p).tobytes()


def test_ridge_jitter_rescues_singular_gram(rng):
    X = rng.standard_normal((3, 6))  # rank 3 < 6
    R, Q = X.T @ X, X.T @ rng.standard_normal((3, 2))
    W = ridge_solve(RidgeProblem(R, Q, 0.0))
    assert np.all(np.isfinite(W))


def test_ridge_indefinite_raises():
    R = np.diag([1.0, -5.0])
    with pytest.raises(SingularMatrixError):
        ridge_solve(RidgeProblem(R, np.ones((2, 1)), 0.0))


def test_ridge_problem_validation():
    with pytest.raises(ShapeError):
        RidgeProblem(np.eye(2), np.ones((3, 1)), 0.1)
    with pytest.raises(ValueError):
        RidgeProblem(np.eye(2), np.ones((2, 1)), -1.0)
    with pytest.raises(ValueError):
        RidgeProblem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones((2, 1)), 0.1)


@given(st.integers(1, 6), st.integers(1, 4), st.integers(2, 30), st.floats(1e-3, 10.0), st.integers(0, 2**31))
def test_ridge_equals_stacked_oracle(d, m, n, gamma, seed):
    r = np.random.default_rng(seed)
    X, T = r.standard_normal((n, d)), r.standard_normal((n, m))
    W = ridge_solve(RidgeProblem(X.T @ X, X.T @ T, gamma))
    ref = stacked_ridge([X], [T], gamma)
    assert np.linalg.norm(W - ref) <= 1e-9 * max(1.0, np.linalg.norm(ref))


# -------------------------------------------------------------- spectral


def test_spectral_identity():
    rep = spectral_sanity(np.eye(3))
    assert rep.max_asymmetry == 0.0 and rep.min_pivot == 1.0 and rep.ok


def test_spectral_antisymmetric():
    rep = spectral_sanity(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert rep.max_asymmetry == 2.0
    assert not rep.psd and not rep.ok


def test_spectral_gram(rng):
    X = rng.standard_normal((10, 4))
    rep = spectral_sanity(X.T @ X)
    assert rep.max_asymmetry < 1e-12 and rep.psd


def test_spectral_rank_deficient_needs_shift():
    A = np.diag([1.0, 0.0])
    assert not spectral_sanity(A).psd
    assert spectral_sanity(A, shift=1e-9).psd


def test_spectral_non_square():
    with pytest.raises(ShapeError):
        spectral_sanity(np.zeros((2, 3)))


# ------------------------------------------------------------------- I/O


def test_binary_layout_is_little_endian_header_then_data():
    A = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    buf = matrix_to_bytes(A)
    assert buf[:16] == (2).to_bytes(8, "little") + (3).to_bytes(8, "little")
    assert np.array_equal(np.frombuffer(buf[16:], dtype="<f8"), np.arange(1.0, 7.0))
    assert len(buf) == 16 + 6 * 8


@given(hnp.arrays(np.float64, st.tuples(st.integers(0, 6), st.integers(0, 6)), elements=finite))
def test_binary_roundtrip(A):
    B = matrix_from_bytes(matrix_to_bytes(A))
    assert B.shape == A.shape and B.tobytes() == A.tobytes()


def test_binary_rejects_truncation(tmp_path):
    buf = matrix_to_bytes(np.ones((3, 3)))
    with pytest.raises(ValueError):
        matrix_from_bytes(buf[:-8])
    with pytest.raises(ValueError):
        matrix_from_bytes(buf[:10])
    save_matrix(tmp_path / "a.bin", np.eye(2))
    assert np.array_equal(load_matrix(tmp_path / "a.bin"), np.eye(2))
