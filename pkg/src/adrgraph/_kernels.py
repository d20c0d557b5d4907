"""Hot loops for sparse aggregation.

Every kernel has a numba ``@njit`` version and a pure-numpy twin. The numba
path is used when numba imports cleanly and ``ADR_DISABLE_NUMBA`` is unset
(or ``0``). ``use_numba()`` switches at runtime, which the tests and the
benchmark rely on.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _env_disabled() -> bool:
    return os.environ.get("ADR_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


_USE_NUMBA = HAS_NUMBA and not _env_disabled()


def use_numba(flag: bool | None = None) -> bool:
    """Query or set the active backend. Returns the (new) setting."""
    global _USE_NUMBA
    if flag is not None:
        _USE_NUMBA = bool(flag) and HAS_NUMBA
    return _USE_NUMBA


def backend_name() -> str:
    return "numba" if _USE_NUMBA else "numpy"


# ---------------------------------------------------------------- spmm


@njit(cache=True)
def _csr_spmm_nb(indptr, indices, data, dense):
    n = indptr.shape[0] - 1
    m = dense.shape[1]
    out = np.zeros((n, m))
    for row in range(n):
        for p in range(indptr[row], indptr[row + 1]):
            w = data[p]
            col = indices[p]
            for j in range(m):
                out[row, j] += w * dense[col, j]
    return out


def _csr_spmm_np(indptr, indices, data, dense):
    n = indptr.shape[0] - 1
    out = np.zeros((n, dense.shape[1]))
    if indices.shape[0] == 0:
        return out
    contrib = data[:, None] * dense[indices]
    nonempty = indptr[1:] > indptr[:-1]
    starts = indptr[:-1][nonempty]
    out[nonempty] = np.add.reduceat(contrib, starts, axis=0)
    return out


def csr_spmm(indptr: np.ndarray, indices: np.ndarray, data: np.ndarray, dense: np.ndarray) -> np.ndarray:
    """Sparse (CSR) times dense, returning a fresh float64 array."""
    dense = np.ascontiguousarray(dense, dtype=np.float64)
    if _USE_NUMBA:
        return _csr_spmm_nb(indptr, indices, data, dense)
    return _csr_spmm_np(indptr, indices, data, dense)


# ------------------------------------------------------ normalization


@njit(cache=True)
def _sym_norm_weights_nb(indptr, indices):
    n = indptr.shape[0] - 1
    deg = np.empty(n)
    for row in range(n):
        deg[row] = indptr[row + 1] - indptr[row]
    weights = np.empty(indices.shape[0])
    for row in range(n):
        for p in range(indptr[row], indptr[row + 1]):
            weights[p] = 1.0 / np.sqrt(deg[row] * deg[indices[p]])
    return weights


def _sym_norm_weights_np(indptr, indices):
    deg = np.diff(indptr).astype(np.float64)
    rows = np.repeat(np.arange(deg.shape[0]), np.diff(indptr))
    return 1.0 / np.sqrt(deg[rows] * deg[indices])


def sym_norm_weights(indptr: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Per-entry 1/sqrt(deg(row) deg(col)) for a CSR pattern that already holds self-loops."""
    if _USE_NUMBA:
        return _sym_norm_weights_nb(indptr, indices)
    return _sym_norm_weights_np(indptr, indices)
