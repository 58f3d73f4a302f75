"""Edge perturbation views and the bounded FIFO text-embedding bank."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .data import TextAttributedGraph


class EmptyBankError(ValueError):
    """Retrieval found no candidates (bank empty, or everything excluded)."""


@dataclass(frozen=True)
class PerturbConfig:
    drop_prob: float = 0.2
    add_prob: float = 0.1
    num_views: int = 1

    def check(self) -> None:
        if not 0.0 <= self.drop_prob <= 1.0 or not 0.0 <= self.add_prob <= 1.0:
            raise ValueError("drop_prob and add_prob must lie in [0, 1]")
        if self.num_views < 1:
            raise ValueError("num_views must be at least 1")


def perturb(graph: TextAttributedGraph, config: PerturbConfig,
            seed: int) -> list[tuple[int, int]]:
    """A perturbed edge set: independent edge drops plus uniform non-edge adds.

    The number of added edges is round(add_prob * |E|), drawn without
    replacement from the non-edges; the node set is unchanged. Deterministic
    per (graph, config, seed), and never produces self-loops or duplicates.
    """
    config.check()
    rng = np.random.default_rng(seed)
    edges = graph.edges
    keep = rng.random(len(edges)) >= config.drop_prob
    kept = [e for e, k in zip(edges, keep) if k]

    n_add = int(round(config.add_prob * len(edges)))
    if n_add == 0:
        return kept

    existing = set(edges)
    rows, cols = np.triu_indices(graph.num_nodes, k=1)
    candidates = [(int(a), int(b)) for a, b in zip(rows, cols)
                  if (int(a), int(b)) not in existing]
    n_add = min(n_add, len(candidates))
    chosen = rng.choice(len(candidates), size=n_add, replace=False)
    kept.extend(candidates[i] for i in sorted(chosen.tolist()))
    return kept


class BankMatches(NamedTuple):
    ids: np.ndarray      # (m,) int64
    vectors: np.ndarray  # (m, d) float64


class TextBank:
    """Bounded FIFO store of (text id, embedding) pairs with exact top-K lookup.

    Stored vectors are detached, re-normalized copies; the oldest entries are
    evicted first. Single-writer: pushes must not race with lookups.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError("bank capacity must be at least 1")
        self.capacity = capacity
        self.dim = dim
        self._ids = np.empty(0, dtype=np.int64)
        self._seqs = np.empty(0, dtype=np.int64)
        self._vecs = np.empty((0, dim), dtype=np.float64)
        self._next_seq = 0

    def __len__(self) -> int:
        return self._ids.shape[0]

    @property
    def ids(self) -> np.ndarray:
        return self._ids.copy()

    def push(self, ids: np.ndarray, vectors: np.ndarray) -> "TextBank":
        """Append rows in batch order, evicting the oldest past capacity."""
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        vectors = np.asarray(vectors, dtype=np.float64)
        if ids.size == 0:
            return self
        if vectors.ndim != 2 or vectors.shape[0] != ids.size or vectors.shape[1] != self.dim:
            raise ValueError(f"bank push: expected ({ids.size}, {self.dim}) vectors, "
                             f"got {vectors.shape}")
        norms = np.sqrt((vectors * vectors).sum(axis=1, keepdims=True))
        vectors = vectors / np.maximum(norms, 1e-12)
        seqs = np.arange(self._next_seq, self._next_seq + ids.size, dtype=np.int64)
        self._next_seq += ids.size
        self._ids = np.concatenate([self._ids, ids])[-self.capacity:]
        self._seqs = np.concatenate([self._seqs, seqs])[-self.capacity:]
        self._vecs = np.concatenate([self._vecs, vectors])[-self.capacity:]
        return self

    def topk(self, query: np.ndarray, k: int,
             exclude_id: int | None = None) -> BankMatches:
        """Exact top-``k`` entries by cosine similarity, older first on ties."""
        if k < 1:
            raise ValueError("k must be at least 1")
        query = np.asarray(query, dtype=np.float64).reshape(-1)
        if query.shape[0] != self.dim:
            raise ValueError(f"query dim {query.shape[0]} != bank dim {self.dim}")
        valid = np.ones(len(self), dtype=bool)
        if exclude_id is not None:
            valid &= self._ids != exclude_id
        if not valid.any():
            raise EmptyBankError("no bank entries remain after exclusion")
        idx = kernels.topk_scan(self._vecs, self._seqs, valid, query, k)
        return BankMatches(self._ids[idx].copy(), self._vecs[idx].copy())

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Snapshot for checkpointing (ids stored as floats in the container)."""
        return {"bank.ids": self._ids.astype(np.float64),
                "bank.seqs": self._seqs.astype(np.float64),
                "bank.vectors": self._vecs.copy(),
                "bank.next_seq": np.asarray(float(self._next_seq))}

    @classmethod
    def from_state(cls, capacity: int, dim: int,
                   arrays: dict[str, np.ndarray]) -> "TextBank":
        bank = cls(capacity, dim)
        bank._ids = arrays["bank.ids"].astype(np.int64)
        bank._seqs = arrays["bank.seqs"].astype(np.int64)
        bank._vecs = arrays["bank.vectors"].reshape(-1, dim).astype(np.float64)
        bank._next_seq = int(arrays["bank.next_seq"])
        return bank
