"""Whitespace tokenization, vocabulary building, and padded batch assembly."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


@dataclass(frozen=True)
class Vocab:
    """Token-to-id mapping with fixed reserved ids PAD=0 and UNK=1."""

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


@dataclass(frozen=True)
class TokenBatch:
    """Fixed-length token id rows with validity masks.

    Each mask row is a prefix of True followed by False; ids are PAD exactly
    where the mask is False.
    """

    ids: np.ndarray    # (B, max_len) int64
    mask: np.ndarray   # (B, max_len) bool

    @property
    def max_len(self) -> int:
        return self.ids.shape[1]

    def row(self, i: int) -> "TokenBatch":
        return TokenBatch(self.ids[i:i + 1], self.mask[i:i + 1])


def build_vocab(corpus: list[str], max_size: int) -> Vocab:
    """Vocabulary of the most frequent lowercased tokens, ties lexicographic.

    Keeps at most ``max_size - 2`` tokens beyond the reserved PAD and UNK.
    """
    if max_size < 2:
        raise ValueError(f"max_size must be at least 2, got {max_size}")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(text.lower().split())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - 2]]
    id_to_token = (PAD_TOKEN, UNK_TOKEN, *kept)
    return Vocab({tok: i for i, tok in enumerate(id_to_token)}, id_to_token)


def tokenize(text: str, vocab: Vocab, max_len: int) -> TokenBatch:
    """One lowercased, whitespace-split row: truncated to max_len, PAD-filled."""
    if max_len < 1:
        raise ValueError(f"max_len must be at least 1, got {max_len}")
    tokens = text.lower().split()[:max_len]
    ids = np.full((1, max_len), PAD_ID, dtype=np.int64)
    mask = np.zeros((1, max_len), dtype=bool)
    for j, tok in enumerate(tokens):
        ids[0, j] = vocab.lookup(tok)
        mask[0, j] = True
    return TokenBatch(ids, mask)


def batch_texts(texts: list[str], vocab: Vocab, max_len: int) -> TokenBatch:
    """Order-preserving stack of tokenized rows."""
    if not texts:
        raise ValueError("batch_texts: empty text list")
    rows = [tokenize(t, vocab, max_len) for t in texts]
    return TokenBatch(np.concatenate([r.ids for r in rows]),
                      np.concatenate([r.mask for r in rows]))


def save_vocab(vocab: Vocab, path) -> None:
    """One non-reserved token per line; line number = id - 2."""
    with open(Path(path), "w", encoding="utf-8", newline="\n") as f:
        for tok in vocab.id_to_token[2:]:
            f.write(tok + "\n")


def load_vocab(path) -> Vocab:
    with open(Path(path), encoding="utf-8") as f:
        kept = [line.rstrip("\n") for line in f if line.rstrip("\n")]
    id_to_token = (PAD_TOKEN, UNK_TOKEN, *kept)
    return Vocab({tok: i for i, tok in enumerate(id_to_token)}, id_to_token)
