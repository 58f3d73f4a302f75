import numpy as np
import pytest

from tagclass.autodiff import ParamSet, Tensor
from tagclass.data import TextAttributedGraph
from tagclass.encoders import (ModelDims, encode_negative_texts, encode_nodes,
                               encode_texts, encode_texts_with_prefix,
                               init_graph_params, init_neg_prompt,
                               init_text_params, make_feature_table,
                               node_features_from_texts, normalized_adjacency)
from tagclass.textproc import TokenBatch, build_vocab, batch_texts


def small_dims(**overrides) -> ModelDims:
    base = dict(embed_dim=6, graph_layers=2, graph_input_dim=5, text_layers=1,
                num_heads=2, model_dim=8, ff_dim=12, max_len=6,
                neg_prompt_len=2, vocab_size=11)
    base.update(overrides)
    return ModelDims(**base)


@pytest.fixture
def dims():
    return small_dims()


@pytest.fixture
def params(dims, rng):
    ps = ParamSet()
    init_graph_params(ps, dims, rng)
    init_text_params(ps, "text", dims, rng)
    init_text_params(ps, "negtext", dims, rng)
    init_neg_prompt(ps, dims, rng)
    return ps


def token_batch(rows, max_len=6):
    ids = np.zeros((len(rows), max_len), dtype=np.int64)
    mask = np.zeros((len(rows), max_len), dtype=bool)
    for b, row in enumerate(rows):
        ids[b, :len(row)] = row
        mask[b, :len(row)] = True
    return TokenBatch(ids, mask)


class TestGraphEncoder:
    def test_edgeless_identical_features_give_identical_rows(self, params, dims):
        g = TextAttributedGraph(2, [], ["x", "x"], [0, 0], ["c"])
        feats = np.tile(np.linspace(0.1, 0.5, dims.graph_input_dim), (2, 1))
        out = encode_nodes(g, feats, params, dims)
        np.testing.assert_array_equal(out.vectors.data[0], out.vectors.data[1])

    def test_permutation_equivariance(self, params, dims, rng):
        edges = [(0, 1), (1, 2), (2, 3), (0, 3)]
        g = TextAttributedGraph(4, edges, ["a"] * 4, [0] * 4, ["c"])
        feats = rng.standard_normal((4, dims.graph_input_dim))
        base = encode_nodes(g, feats, params, dims).vectors.data

        perm = np.array([2, 0, 3, 1])  # new id of old node i
        pedges = [tuple(sorted((int(perm[a]), int(perm[b])))) for a, b in edges]
        pg = TextAttributedGraph(4, pedges, ["a"] * 4, [0] * 4, ["c"])
        pfeats = np.empty_like(feats)
        pfeats[perm] = feats
        permuted = encode_nodes(pg, pfeats, params, dims).vectors.data
        np.testing.assert_allclose(permuted[perm], base, atol=1e-12)

    def test_two_node_hand_computation(self):
        # one edge, one layer: A+I = ones(2,2), degrees 2 -> A_hat = 0.5 everywhere
        dims = small_dims(graph_layers=1, graph_input_dim=2, embed_dim=2)
        w = np.array([[1.0, 2.0], [-1.0, 0.5]])
        ps = ParamSet({"graph.layer0.weight": Tensor(w, requires_grad=True)})
        g = TextAttributedGraph(2, [(0, 1)], ["a", "b"], [0, 0], ["c"])
        feats = np.array([[1.0, 0.0], [0.0, 2.0]])
        out = encode_nodes(g, feats, ps, dims).vectors.data

        a_hat = np.full((2, 2), 0.5)
        expect = a_hat @ feats @ w
        expect /= np.linalg.norm(expect, axis=1, keepdims=True)
        np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_rows_are_unit_norm(self, params, dims, rng):
        g = TextAttributedGraph(5, [(0, 1), (2, 3)], ["a"] * 5, [0] * 5, ["c"])
        out = encode_nodes(g, rng.standard_normal((5, dims.graph_input_dim)),
                           params, dims)
        np.testing.assert_allclose(np.linalg.norm(out.vectors.data, axis=1),
                                   1.0, atol=1e-9)

    def test_edge_order_and_orientation_invariance(self, params, dims, rng):
        feats = rng.standard_normal((4, dims.graph_input_dim))
        g1 = TextAttributedGraph(4, [(0, 1), (1, 2)], ["a"] * 4, [0] * 4, ["c"])
        g2 = TextAttributedGraph(4, [(2, 1), (1, 0)], ["a"] * 4, [0] * 4, ["c"])
        np.testing.assert_array_equal(
            encode_nodes(g1, feats, params, dims).vectors.data,
            encode_nodes(g2, feats, params, dims).vectors.data)

    def test_feature_row_count_mismatch(self, params, dims):
        g = TextAttributedGraph(3, [], ["a"] * 3, [0] * 3, ["c"])
        with pytest.raises(Exception, match="3"):
            encode_nodes(g, np.zeros((2, dims.graph_input_dim)), params, dims)


class TestNormalizedAdjacency:
    def test_row_weights(self):
        adj = normalized_adjacency(2, np.array([[0, 1]]))
        dense = np.zeros((2, 2))
        for i in range(2):
            for p in range(adj.indptr[i], adj.indptr[i + 1]):
                dense[i, adj.indices[p]] = adj.weights[p]
        np.testing.assert_allclose(dense, np.full((2, 2), 0.5), atol=1e-15)

    def test_symmetry(self, rng):
        edges = np.array([(0, 1), (1, 3), (2, 3), (0, 4)])
        adj = normalized_adjacency(5, edges)
        dense = np.zeros((5, 5))
        for i in range(5):
            for p in range(adj.indptr[i], adj.indptr[i + 1]):
                dense[i, adj.indices[p]] = adj.weights[p]
        np.testing.assert_array_equal(dense, dense.T)


class TestTextEncoder:
    def test_identical_rows_give_identical_embeddings(self, params, dims):
        batch = token_batch([[2, 3, 4], [2, 3, 4]])
        out = encode_texts(batch, params, dims)
        np.testing.assert_array_equal(out.vectors.data[0], out.vectors.data[1])

    def test_trailing_pad_invariance(self, params, dims):
        short = token_batch([[2, 3]], max_len=3)
        long = token_batch([[2, 3]], max_len=6)
        np.testing.assert_allclose(encode_texts(short, params, dims).vectors.data,
                                   encode_texts(long, params, dims).vectors.data,
                                   atol=1e-12)

    def test_all_pad_row_rejected(self, params, dims):
        with pytest.raises(ValueError, match="row 0"):
            encode_texts(token_batch([[]]), params, dims)

    def test_rows_are_unit_norm(self, params, dims):
        out = encode_texts(token_batch([[2, 3], [4, 5, 6]]), params, dims)
        np.testing.assert_allclose(np.linalg.norm(out.vectors.data, axis=1),
                                   1.0, atol=1e-9)

    def test_single_token_hand_computation(self):
        # 1 layer, 1 head, 1 real token: attention over one position is the
        # identity read of its value vector
        dims = small_dims(text_layers=1, num_heads=1, model_dim=2, ff_dim=2,
                          max_len=2, vocab_size=3, embed_dim=2)
        rng = np.random.default_rng(0)
        ps = ParamSet()
        init_text_params(ps, "text", dims, rng)
        batch = token_batch([[2]], max_len=2)
        got = encode_texts(batch, ps, dims).vectors.data[0]

        def ln(x, gain, bias, eps=1e-5):
            mu = x.mean()
            var = ((x - mu) ** 2).mean()
            return (x - mu) / np.sqrt(var + eps) * gain + bias

        p = {name: t.data for name, t in ps.items()}
        x = p["text.tok"][2] + p["text.pos"][0]
        v = x @ p["text.layer0.head0.wv"]          # softmax over one key = 1
        x = ln(x + v @ p["text.layer0.wo"],
               p["text.layer0.ln1.gain"], p["text.layer0.ln1.bias"])
        ff = np.maximum(x @ p["text.layer0.ff1"], 0.0) @ p["text.layer0.ff2"]
        x = ln(x + ff, p["text.layer0.ln2.gain"], p["text.layer0.ln2.bias"])
        expect = x @ p["text.proj"]                 # pooling over one token
        expect /= np.linalg.norm(expect)
        np.testing.assert_allclose(got, expect, atol=1e-12)


class TestNegativeEncoder:
    def test_zero_length_prompt_reduces_to_encode_texts(self, dims, rng):
        ps = ParamSet()
        init_text_params(ps, "text", dims, rng)
        batch = token_batch([[2, 3, 4], [5, 6]])
        plain = encode_texts(batch, ps, dims).vectors.data
        empty_prompt = Tensor(np.zeros((0, dims.model_dim)), requires_grad=True)
        prefixed = encode_texts_with_prefix(batch, ps, dims, empty_prompt).vectors.data
        np.testing.assert_array_equal(plain, prefixed)

    def test_negative_encoder_matches_prefix_encoding(self, params, dims):
        batch = token_batch([[2, 3], [4, 5]])
        neg = encode_negative_texts(batch, params, dims).vectors.data
        manual = encode_texts_with_prefix(batch, params, dims,
                                          params["negprompt.prompt"],
                                          namespace="negtext").vectors.data
        np.testing.assert_array_equal(neg, manual)

    def test_same_prompt_outputs_differ_iff_texts_differ(self, params, dims):
        batch = token_batch([[2, 3], [2, 3], [4, 5]])
        out = encode_negative_texts(batch, params, dims).vectors.data
        np.testing.assert_array_equal(out[0], out[1])
        assert not np.allclose(out[0], out[2])

    def test_prompt_overflow_rejected(self, params, dims):
        full = token_batch([[2, 3, 4, 5, 6, 7]])  # 6 tokens, max_len 6, M=2
        with pytest.raises(ValueError, match="overflow"):
            encode_negative_texts(full, params, dims)

    def test_single_token_prefix_hand_computation(self):
        # M=1 prompt + 1 real token behaves as a 2-position sequence whose
        # first embedding row is the prompt vector
        dims = small_dims(text_layers=1, num_heads=1, model_dim=2, ff_dim=2,
                          max_len=3, vocab_size=3, embed_dim=2,
                          neg_prompt_len=1)
        rng = np.random.default_rng(1)
        ps = ParamSet()
        init_text_params(ps, "negtext", dims, rng)
        init_neg_prompt(ps, dims, rng)
        batch = token_batch([[2]], max_len=3)
        got = encode_negative_texts(batch, ps, dims).vectors.data[0]

        def ln(x, gain, bias, eps=1e-5):
            mu = x.mean(axis=-1, keepdims=True)
            var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
            return (x - mu) / np.sqrt(var + eps) * gain + bias

        p = {name: t.data for name, t in ps.items()}
        x = np.stack([p["negprompt.prompt"][0] + p["negtext.pos"][0],
                      p["negtext.tok"][2] + p["negtext.pos"][1],
                      p["negtext.tok"][0] + p["negtext.pos"][2]])
        name = "negtext.layer0"
        q = x @ p[f"{name}.head0.wq"]
        k = x @ p[f"{name}.head0.wk"]
        v = x @ p[f"{name}.head0.wv"]
        scores = q @ k.T / np.sqrt(1.0)  # dk = 2/1... computed below
        scores = (q @ k.T) / np.sqrt(2.0)
        scores[:, 2] = -np.inf           # padding key masked out
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights[:, 2] = 0.0
        weights /= weights.sum(axis=1, keepdims=True)
        x = ln(x + (weights @ v) @ p[f"{name}.wo"],
               p[f"{name}.ln1.gain"], p[f"{name}.ln1.bias"])
        ff = np.maximum(x @ p[f"{name}.ff1"], 0.0) @ p[f"{name}.ff2"]
        x = ln(x + ff, p[f"{name}.ln2.gain"], p[f"{name}.ln2.bias"])
        pooled = x[:2].mean(axis=0)      # prompt + real token are both valid
        expect = pooled @ p["negtext.proj"]
        expect /= np.linalg.norm(expect)
        np.testing.assert_allclose(got, expect, atol=1e-12)


class TestNodeFeatures:
    def test_mean_of_token_rows(self):
        vocab = build_vocab(["red blue"], 8)
        table = make_feature_table(len(vocab), 4, np.random.default_rng(0))
        g = TextAttributedGraph(2, [], ["red blue", "red"], [0, 0], ["c"])
        feats = node_features_from_texts(g, vocab, table, max_len=4)
        r, b = vocab.lookup("red"), vocab.lookup("blue")
        np.testing.assert_allclose(feats[0], (table[r] + table[b]) / 2, atol=1e-15)
        np.testing.assert_allclose(feats[1], table[r], atol=1e-15)

    def test_empty_text_maps_to_zeros(self):
        vocab = build_vocab(["word"], 4)
        table = make_feature_table(len(vocab), 3, np.random.default_rng(0))
        g = TextAttributedGraph(2, [], ["word", ""], [0, 0], ["c"])
        feats = node_features_from_texts(g, vocab, table, max_len=4)
        np.testing.assert_array_equal(feats[1], np.zeros(3))
