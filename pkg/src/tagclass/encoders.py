"""The three networks: graph encoder, text encoder, negative text encoder.

The graph encoder stacks symmetric-normalized propagation layers
(self-loops added internally): H <- relu(A_hat @ H @ W) with no activation
after the last layer. The text encoder is a small transformer over token +
learned positional embeddings, with padding masked out of attention, masked
mean pooling, and a linear projection. The negative text encoder shares the
architecture and prepends learnable prompt vectors at the embedding level.
All encoders L2-normalize their output rows.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import ParamSet, Tensor
from .data import TextAttributedGraph
from .textproc import PAD_ID, TokenBatch, Vocab


@dataclass(frozen=True)
class ModelDims:
    """Shared shape settings for both encoders; desk-scale defaults."""

    embed_dim: int = 32        # output dim of every encoder
    graph_layers: int = 2
    graph_input_dim: int = 32
    text_layers: int = 2
    num_heads: int = 2
    model_dim: int = 32
    ff_dim: int = 64
    max_len: int = 32
    neg_prompt_len: int = 8
    vocab_size: int = 0        # resolved once the vocabulary is built

    def check(self) -> None:
        if self.model_dim % self.num_heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by "
                             f"num_heads {self.num_heads}")
        if self.graph_layers < 1 or self.text_layers < 1:
            raise ValueError("encoders need at least one layer")
        if self.neg_prompt_len < 0:
            raise ValueError("neg_prompt_len cannot be negative")

    def resolved(self, vocab_size: int) -> "ModelDims":
        return replace(self, vocab_size=vocab_size)


@dataclass(frozen=True)
class EmbeddingBatch:
    """Rows of d-dimensional embeddings tied to node/text/class ids."""

    ids: np.ndarray
    vectors: Tensor

    def detached(self) -> np.ndarray:
        return self.vectors.data.copy()


# ---------------------------------------------------------------------------
# graph side
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalizedAdjacency:
    """CSR form of D^(-1/2) (A + I) D^(-1/2); symmetric by construction."""

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray


def normalized_adjacency(num_nodes: int, edges: np.ndarray) -> NormalizedAdjacency:
    """Build the self-loop-augmented, symmetric-normalized adjacency.

    Invariant to edge order and to the stored orientation of each pair.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    loops = np.arange(num_nodes, dtype=np.int64)
    rows = np.concatenate([edges[:, 0], edges[:, 1], loops])
    cols = np.concatenate([edges[:, 1], edges[:, 0], loops])
    deg = np.bincount(rows, minlength=num_nodes).astype(np.float64)
    weights = 1.0 / np.sqrt(deg[rows] * deg[cols])
    order = np.lexsort((cols, rows))
    rows, cols, weights = rows[order], cols[order], weights[order]
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=num_nodes), out=indptr[1:])
    return NormalizedAdjacency(num_nodes, indptr, cols, weights)


def graph_propagate(adj: NormalizedAdjacency, h: Tensor) -> Tensor:
    """One round of normalized message passing; kernel-backed, differentiable."""
    if h.shape[0] != adj.num_nodes:
        raise ad.ShapeError(f"graph_propagate: features have {h.shape[0]} rows "
                            f"for {adj.num_nodes} nodes")
    data = kernels.csr_matmul(adj.indptr, adj.indices, adj.weights, h.data)

    def vjp(g):
        # the normalized adjacency is symmetric, so the transpose product reuses it
        return kernels.csr_matmul(adj.indptr, adj.indices, adj.weights, g)

    return ad._make(data, [(h, vjp)], "graph_propagate")


def make_feature_table(vocab_size: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Frozen random token table used to derive node input features."""
    bound = 1.0 / np.sqrt(dim)
    return rng.uniform(-bound, bound, size=(vocab_size, dim))


def node_features_from_texts(graph: TextAttributedGraph, vocab: Vocab,
                             table: np.ndarray, max_len: int) -> np.ndarray:
    """Per-node mean of frozen token embeddings; empty texts map to zeros."""
    from .textproc import batch_texts

    batch = batch_texts(list(graph.texts), vocab, max_len)
    counts = batch.mask.sum(axis=1)
    summed = np.einsum("btd,bt->bd", table[batch.ids], batch.mask.astype(np.float64))
    return summed / np.maximum(counts, 1)[:, None]


def encode_nodes(graph: TextAttributedGraph | NormalizedAdjacency,
                 node_features: Tensor | np.ndarray,
                 params: Mapping[str, Tensor],
                 dims: ModelDims) -> EmbeddingBatch:
    """Node embeddings for every node of the graph, rows L2-normalized."""
    if isinstance(graph, NormalizedAdjacency):
        adj = graph
    else:
        adj = normalized_adjacency(graph.num_nodes, graph.edge_array())
    h = node_features if isinstance(node_features, Tensor) else Tensor(node_features)
    if h.shape[0] != adj.num_nodes:
        raise ad.ShapeError(f"encode_nodes: features have {h.shape[0]} rows "
                            f"for {adj.num_nodes} nodes")
    for layer in range(dims.graph_layers):
        h = graph_propagate(adj, h)
        h = ad.matmul(h, params[f"graph.layer{layer}.weight"])
        if layer < dims.graph_layers - 1:
            h = ad.relu(h)
    return EmbeddingBatch(np.arange(adj.num_nodes), ad.l2_normalize_rows(h))


# ---------------------------------------------------------------------------
# text side
# ---------------------------------------------------------------------------


def _transformer_layer(x: Tensor, key_mask: np.ndarray,
                       params: Mapping[str, Tensor], name: str,
                       dims: ModelDims) -> Tensor:
    dk = dims.model_dim // dims.num_heads
    scale = 1.0 / np.sqrt(dk)
    heads = []
    for h in range(dims.num_heads):
        q = ad.matmul(x, params[f"{name}.head{h}.wq"])
        k = ad.matmul(x, params[f"{name}.head{h}.wk"])
        v = ad.matmul(x, params[f"{name}.head{h}.wv"])
        scores = ad.matmul(q, ad.transpose_last2(k)) * scale
        attn = ad.softmax(scores, mask=key_mask[:, None, :])
        heads.append(ad.matmul(attn, v))
    attended = ad.matmul(ad.concat(heads, axis=-1), params[f"{name}.wo"])
    x = ad.layer_norm(x + attended, params[f"{name}.ln1.gain"], params[f"{name}.ln1.bias"])
    ff = ad.matmul(ad.relu(ad.matmul(x, params[f"{name}.ff1"])), params[f"{name}.ff2"])
    return ad.layer_norm(x + ff, params[f"{name}.ln2.gain"], params[f"{name}.ln2.bias"])


def _run_text_encoder(x: Tensor, mask: np.ndarray, params: Mapping[str, Tensor],
                      namespace: str, dims: ModelDims) -> Tensor:
    seq_len = x.shape[1]
    pos_table = params[f"{namespace}.pos"]
    if seq_len > pos_table.shape[0]:
        raise ad.ShapeError(f"sequence length {seq_len} exceeds positional table "
                            f"length {pos_table.shape[0]}")
    x = x + ad.gather_rows(pos_table, np.arange(seq_len))
    for layer in range(dims.text_layers):
        x = _transformer_layer(x, mask, params, f"{namespace}.layer{layer}", dims)
    pooled = ad.masked_mean_rows(x, mask)
    return ad.l2_normalize_rows(ad.matmul(pooled, params[f"{namespace}.proj"]))


def shift_for_prefix(batch: TokenBatch, prefix_len: int) -> TokenBatch:
    """Move each row's real tokens right by ``prefix_len`` positions.

    The freed leading positions are marked valid (they will carry prompt
    vectors); rows whose real tokens no longer fit raise.
    """
    max_len = batch.max_len
    real = batch.mask.sum(axis=1)
    over = real + prefix_len > max_len
    if over.any():
        row = int(np.flatnonzero(over)[0])
        raise ValueError(f"prompt overflow: row {row} has {int(real[row])} tokens "
                         f"+ {prefix_len} prompt vectors > max_len {max_len}")
    ids = np.full_like(batch.ids, PAD_ID)
    mask = np.zeros_like(batch.mask)
    for b in range(batch.ids.shape[0]):
        r = int(real[b])
        ids[b, prefix_len:prefix_len + r] = batch.ids[b, :r]
        mask[b, :prefix_len + r] = True
    return TokenBatch(ids, mask)


def encode_texts(batch: TokenBatch, params: Mapping[str, Tensor], dims: ModelDims,
                 text_ids: np.ndarray | None = None,
                 namespace: str = "text") -> EmbeddingBatch:
    """Text embeddings, one row per batch row; rows L2-normalized."""
    if not batch.mask.any(axis=1).all():
        row = int(np.flatnonzero(~batch.mask.any(axis=1))[0])
        raise ValueError(f"encode_texts: row {row} has no real tokens")
    x = ad.gather_rows(params[f"{namespace}.tok"], batch.ids)
    vectors = _run_text_encoder(x, batch.mask, params, namespace, dims)
    ids = np.arange(batch.ids.shape[0]) if text_ids is None else np.asarray(text_ids)
    return EmbeddingBatch(ids, vectors)


def encode_texts_with_prefix(batch: TokenBatch, params: Mapping[str, Tensor],
                             dims: ModelDims, prompt: Tensor,
                             text_ids: np.ndarray | None = None,
                             namespace: str = "text") -> EmbeddingBatch:
    """Encode with learnable prompt vectors prepended at the embedding level."""
    m = prompt.shape[0]
    if m == 0:
        return encode_texts(batch, params, dims, text_ids, namespace)
    shifted = shift_for_prefix(batch, m)
    x = ad.gather_rows(params[f"{namespace}.tok"], shifted.ids)
    # zero the prompt slots of the token stream, then add the prompt canvas
    keep = np.ones((1, shifted.max_len, 1))
    keep[0, :m, 0] = 0.0
    canvas = ad.concat_rows([prompt, Tensor(np.zeros((shifted.max_len - m, prompt.shape[1])))])
    x = x * Tensor(keep) + canvas
    vectors = _run_text_encoder(x, shifted.mask, params, namespace, dims)
    ids = np.arange(batch.ids.shape[0]) if text_ids is None else np.asarray(text_ids)
    return EmbeddingBatch(ids, vectors)


def encode_negative_texts(batch: TokenBatch, params: Mapping[str, Tensor],
                          dims: ModelDims,
                          text_ids: np.ndarray | None = None) -> EmbeddingBatch:
    """Negative text embeddings via the negative encoder and its prompt."""
    return encode_texts_with_prefix(batch, params, dims,
                                    params["negprompt.prompt"],
                                    text_ids, namespace="negtext")


# ---------------------------------------------------------------------------
# parameter initialization
# ---------------------------------------------------------------------------


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_graph_params(params: ParamSet, dims: ModelDims, rng: np.random.Generator) -> None:
    d_in = dims.graph_input_dim
    for layer in range(dims.graph_layers):
        params.add(f"graph.layer{layer}.weight", _uniform(rng, (d_in, dims.embed_dim), d_in))
        d_in = dims.embed_dim


def init_text_params(params: ParamSet, namespace: str, dims: ModelDims,
                     rng: np.random.Generator) -> None:
    dm, dk = dims.model_dim, dims.model_dim // dims.num_heads
    params.add(f"{namespace}.tok", _uniform(rng, (dims.vocab_size, dm), dm))
    params.add(f"{namespace}.pos", _uniform(rng, (dims.max_len, dm), dm))
    for layer in range(dims.text_layers):
        name = f"{namespace}.layer{layer}"
        for h in range(dims.num_heads):
            for w in ("wq", "wk", "wv"):
                params.add(f"{name}.head{h}.{w}", _uniform(rng, (dm, dk), dm))
        params.add(f"{name}.wo", _uniform(rng, (dm, dm), dm))
        params.add(f"{name}.ln1.gain", Tensor(np.ones(dm), requires_grad=True))
        params.add(f"{name}.ln1.bias", Tensor(np.zeros(dm), requires_grad=True))
        params.add(f"{name}.ff1", _uniform(rng, (dm, dims.ff_dim), dm))
        params.add(f"{name}.ff2", _uniform(rng, (dims.ff_dim, dm), dims.ff_dim))
        params.add(f"{name}.ln2.gain", Tensor(np.ones(dm), requires_grad=True))
        params.add(f"{name}.ln2.bias", Tensor(np.zeros(dm), requires_grad=True))
    params.add(f"{namespace}.proj", _uniform(rng, (dm, dims.embed_dim), dm))


def init_neg_prompt(params: ParamSet, dims: ModelDims, rng: np.random.Generator) -> None:
    params.add("negprompt.prompt",
               _uniform(rng, (dims.neg_prompt_len, dims.model_dim), dims.model_dim))
