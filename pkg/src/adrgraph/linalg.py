"""Dense accumulators, the regularized least-squares solver, and matrix I/O.

Every closed-form step in the pipeline reduces to the same system

    W = (R + gamma I)^-1 Q,   R = sum X_i^T X_i,   Q = sum X_i^T T_i

so this module owns the accumulation and the SPD solve. Matrices are plain
C-contiguous float64 ndarrays.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla


class ShapeError(ValueError):
    """Operand dimensions do not chain."""


class SingularMatrixError(np.linalg.LinAlgError):
    """R + gamma I could not be factorized even after jitter."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def _check_finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{what} produced non-finite entries")
    return a


def gram_accumulate(R, X) -> np.ndarray:
    """Return ``R + X^T X``; ``R`` is left untouched."""
    R = as_matrix(R, "R")
    X = as_matrix(X, "X")
    if R.shape[0] != R.shape[1]:
        raise ShapeError(f"R must be square, got {R.shape}")
    if X.shape[1] != R.shape[0]:
        raise ShapeError(f"X has {X.shape[1]} columns, R is {R.shape[0]}x{R.shape[1]}")
    G = X.T @ X
    # exact symmetry regardless of how BLAS blocks the product
    G = 0.5 * (G + G.T)
    return _check_finite(R + G, "gram_accumulate")


def cross_accumulate(Q, X, T) -> np.ndarray:
    """Return ``Q + X^T T``."""
    Q = as_matrix(Q, "Q")
    X = as_matrix(X, "X")
    T = as_matrix(T, "T")
    if X.shape[0] != T.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows but T has {T.shape[0]}")
    if Q.shape != (X.shape[1], T.shape[1]):
        raise ShapeError(f"Q is {Q.shape}, expected {(X.shape[1], T.shape[1])}")
    return _check_finite(Q + X.T @ T, "cross_accumulate")


@dataclass(frozen=True)
class RidgeProblem:
    R: np.ndarray
    Q: np.ndarray
    gamma: float

    def __post_init__(self):
        R = as_matrix(self.R, "R")
        Q = as_matrix(self.Q, "Q")
        if R.shape[0] != R.shape[1]:
            raise ShapeError(f"R must be square, got {R.shape}")
        if Q.shape[0] != R.shape[0]:
            raise ShapeError(f"Q has {Q.shape[0]} rows, R is {R.shape[0]}x{R.shape[0]}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if R.size:
            asym = float(np.max(np.abs(R - R.T)))
            if asym > 1e-10 * max(1.0, float(np.max(np.abs(R)))):
                raise ValueError(f"R is not symmetric (max |R - R^T| = {asym:.3g})")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "gamma", float(self.gamma))


def ridge_solve(p: RidgeProblem) -> np.ndarray:
    """Solve ``(R + gamma I) W = Q`` by Cholesky.

    If the factorization fails, gamma is bumped once by ``1e-10 trace(R)/d``
    and the factorization retried; a second failure raises
    :class:`SingularMatrixError`.
    """
    R, Q, gamma = p.R, p.Q, p.gamma
    d = R.shape[0]
    if d == 0:
        return np.zeros((0, Q.shape[1]))
    A = R + gamma * np.eye(d)
    try:
        factor = sla.cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * max(np.trace(R), 0.0) / d
        if jitter <= 0.0:
            jitter = 1e-10
        try:
            factor = sla.cho_factor(R + (gamma + jitter) * np.eye(d), lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(
                f"R + gamma I is not positive definite (gamma={gamma:g}, jitter={jitter:g})"
            ) from exc
    W = sla.cho_solve(factor, Q, check_finite=False)
    return _check_finite(np.ascontiguousarray(W), "ridge_solve")


@dataclass(frozen=True)
class SpectralReport:
    max_asymmetry: float
    min_pivot: float | None  # None when Cholesky failed
    size: int
    scale: float = 1.0

    @property
    def symmetric(self) -> bool:
        return self.max_asymmetry <= 1e-10 * max(1.0, self.scale)

    @property
    def psd(self) -> bool:
        return self.min_pivot is not None

    @property
    def ok(self) -> bool:
        return self.symmetric and self.psd


def spectral_sanity(A, shift: float = 0.0) -> SpectralReport:
    """Symmetry and positive-(semi)definiteness check for a square matrix.

    The pivot reported is the smallest diagonal entry of the LDL^T ``D``
    (squared Cholesky diagonal) of ``A + shift I``. Pass a small positive
    ``shift`` to test semidefiniteness of rank-deficient Gram matrices.
    """
    A = as_matrix(A, "A")
    if A.shape[0] != A.shape[1]:
        raise ShapeError(f"A must be square, got {A.shape}")
    n = A.shape[0]
    asym = float(np.max(np.abs(A - A.T))) if n else 0.0
    scale = float(np.max(np.abs(A))) if n else 1.0
    if not np.all(np.isfinite(A)):
        return SpectralReport(asym if np.isfinite(asym) else np.inf, None, n, scale)
    try:
        L = np.linalg.cholesky(0.5 * (A + A.T) + shift * np.eye(n)) if n else np.zeros((0, 0))
        pivot = float(np.min(np.diag(L)) ** 2) if n else 1.0
        if asym > 1e-10 * max(1.0, scale):
            # cholesky only reads one triangle; a non-symmetric input is not PSD in our sense
            pivot = None
    except np.linalg.LinAlgError:
        pivot = None
    return SpectralReport(asym, pivot, n, scale)


# ------------------------------------------------------------- binary I/O

_HEADER = struct.Struct("<QQ")


def matrix_to_bytes(A) -> bytes:
    A = as_matrix(A)
    rows, cols = A.shape
    return _HEADER.pack(rows, cols) + A.astype("<f8", copy=False).tobytes(order="C")


def matrix_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise ValueError("matrix file truncated: missing header")
    rows, cols = _HEADER.unpack_from(buf, 0)
    expected = _HEADER.size + 8 * rows * cols
    if len(buf) != expected:
        raise ValueError(f"matrix file has {len(buf)} bytes, header implies {expected}")
    data = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return data.reshape(rows, cols).astype(np.float64)


def save_matrix(path, A) -> None:
    Path(path).write_bytes(matrix_to_bytes(A))


def load_matrix(path) -> np.ndarray:
    return matrix_from_bytes(Path(path).read_bytes())
