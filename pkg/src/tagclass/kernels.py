"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The two loop-bound kernels in this package are the CSR adjacency product
(run twice per GCN layer, forward and backward, every training step) and
the text-bank top-K cosine scan. Both are compiled with ``numba.njit``
when available; setting the environment variable ``TAGCLASS_DISABLE_NUMBA``
(to any non-empty value) selects the pure-numpy path instead. The two
backends accumulate in the same order, so results agree to the last bit.

``benchmarks/bench_kernels.py`` times one backend against the other.
"""

from __future__ import annotations

import os

import numpy as np

DISABLE_ENV = "TAGCLASS_DISABLE_NUMBA"

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


_backend = "numpy" if (not HAS_NUMBA or os.environ.get(DISABLE_ENV)) else "numba"


def get_backend() -> str:
    """Return the active backend name, ``"numba"`` or ``"numpy"``."""
    return _backend


def set_backend(name: str) -> None:
    """Force a backend; mainly for tests and benchmarks."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    _backend = name


# ---------------------------------------------------------------------------
# CSR adjacency product: out[i] = sum_p w[p] * x[indices[p]] over row i's slice
# ---------------------------------------------------------------------------


@njit(cache=True)
def _csr_matmul_jit(indptr, indices, weights, x, out):  # pragma: no cover - jitted
    n = indptr.shape[0] - 1
    d = x.shape[1]
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            w = weights[p]
            for c in range(d):
                out[i, c] += w * x[j, c]


def _csr_matmul_np(indptr, indices, weights, x, out):
    n = indptr.shape[0] - 1
    rows = np.repeat(np.arange(n), np.diff(indptr))
    # np.add.at applies updates in index order, matching the jit loop exactly
    np.add.at(out, rows, weights[:, None] * x[indices])


def csr_matmul(indptr: np.ndarray, indices: np.ndarray, weights: np.ndarray,
               x: np.ndarray) -> np.ndarray:
    """Sparse (CSR) matrix times dense matrix, rows of ``x`` gathered by column index."""
    n = indptr.shape[0] - 1
    if x.ndim != 2:
        raise ValueError(f"dense operand must be 2-D, got shape {x.shape}")
    out = np.zeros((n, x.shape[1]), dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if _backend == "numba":
        _csr_matmul_jit(indptr, indices, weights, x, out)
    else:
        _csr_matmul_np(indptr, indices, weights, x, out)
    return out


# ---------------------------------------------------------------------------
# Top-K scan over bank rows: rank by similarity desc, insertion sequence asc
# ---------------------------------------------------------------------------


@njit(cache=True)
def _topk_scan_jit(vecs, seqs, valid, query, k, out_idx):  # pragma: no cover - jitted
    n = vecs.shape[0]
    d = vecs.shape[1]
    sims = np.empty(n, dtype=np.float64)
    for i in range(n):
        s = 0.0
        for c in range(d):
            s += vecs[i, c] * query[c]
        sims[i] = s
    taken = np.zeros(n, dtype=np.bool_)
    found = 0
    for slot in range(k):
        best = -1
        for i in range(n):
            if taken[i] or not valid[i]:
                continue
            if best < 0 or sims[i] > sims[best] or (sims[i] == sims[best] and seqs[i] < seqs[best]):
                best = i
        if best < 0:
            break
        taken[best] = True
        out_idx[slot] = best
        found += 1
    return found


def _topk_scan_np(vecs, seqs, valid, query, k):
    idx = np.flatnonzero(valid)
    sims = vecs[idx] @ query
    # lexsort: last key is primary -> similarity descending, then older first
    order = np.lexsort((seqs[idx], -sims))
    return idx[order[:k]]


def topk_scan(vecs: np.ndarray, seqs: np.ndarray, valid: np.ndarray,
              query: np.ndarray, k: int) -> np.ndarray:
    """Indices of the top-``k`` valid rows by dot-product similarity.

    Rows are assumed unit-normalized so the dot product is the cosine.
    Ties are broken toward the smaller insertion sequence number.
    """
    if _backend == "numba":
        out_idx = np.empty(min(k, vecs.shape[0]), dtype=np.int64)
        found = _topk_scan_jit(vecs, seqs, valid,
                               np.ascontiguousarray(query, dtype=np.float64),
                               out_idx.shape[0], out_idx)
        return out_idx[:found]
    return _topk_scan_np(vecs, seqs, valid, query, k)
