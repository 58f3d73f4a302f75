import numpy as np
import pytest

from tagclass import kernels
from tagclass.encoders import normalized_adjacency

from oracles import oracle_bank_topk


@pytest.fixture
def csr(rng):
    edges = []
    for a in range(12):
        for b in range(a + 1, 12):
            if rng.random() < 0.3:
                edges.append((a, b))
    return normalized_adjacency(12, np.asarray(edges))


def dense_of(adj):
    n = adj.num_nodes
    mat = np.zeros((n, n))
    for i in range(n):
        for p in range(adj.indptr[i], adj.indptr[i + 1]):
            mat[i, adj.indices[p]] = adj.weights[p]
    return mat


def test_csr_matches_dense_product(csr, rng):
    x = rng.standard_normal((12, 5))
    np.testing.assert_allclose(kernels.csr_matmul(csr.indptr, csr.indices,
                                                  csr.weights, x),
                               dense_of(csr) @ x, atol=1e-12)


@pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba unavailable")
def test_backends_agree_bitwise(csr, rng):
    x = rng.standard_normal((12, 7))
    previous = kernels.get_backend()
    try:
        kernels.set_backend("numba")
        a = kernels.csr_matmul(csr.indptr, csr.indices, csr.weights, x)
        kernels.set_backend("numpy")
        b = kernels.csr_matmul(csr.indptr, csr.indices, csr.weights, x)
    finally:
        kernels.set_backend(previous)
    np.testing.assert_array_equal(a, b)


def test_csr_rejects_non_2d(csr):
    with pytest.raises(ValueError):
        kernels.csr_matmul(csr.indptr, csr.indices, csr.weights, np.zeros(12))


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.set_backend("gpu")


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_topk_scan_matches_sort_oracle(backend, rng):
    if backend == "numba" and not kernels.HAS_NUMBA:
        pytest.skip("numba unavailable")
    previous = kernels.get_backend()
    try:
        kernels.set_backend(backend)
        for trial in range(20):
            n = int(rng.integers(1, 40))
            vecs = rng.standard_normal((n, 4))
            vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
            if n >= 2 and trial % 3 == 0:
                vecs[1] = vecs[0]  # manufacture an exact tie
            seqs = np.arange(n, dtype=np.int64)
            query = rng.standard_normal(4)
            query /= np.linalg.norm(query)
            k = int(rng.integers(1, n + 3))
            got = kernels.topk_scan(vecs, seqs, np.ones(n, dtype=bool), query, k)
            entries = [(i, int(seqs[i]), vecs[i]) for i in range(n)]
            want = [eid for eid, _ in oracle_bank_topk(entries, query, k)]
            assert got.tolist() == want
    finally:
        kernels.set_backend(previous)


def test_topk_scan_respects_validity_mask(rng):
    vecs = np.eye(3)
    seqs = np.arange(3, dtype=np.int64)
    valid = np.array([False, True, True])
    got = kernels.topk_scan(vecs, seqs, valid, np.array([1.0, 0.0, 0.0]), 2)
    assert 0 not in got.tolist()
