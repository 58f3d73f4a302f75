"""Class-description prompting: zero-shot scoring, continuous-prompt tuning,
and the probability-average decision rule.

Zero-shot classification embeds a templated description of every class and
softmaxes the node/class similarities over the learned temperature. Few-shot
episodes tune M learnable vectors prepended to the descriptions (encoders
frozen) on the support set. Zero-shot models can additionally score
descriptions through the negative text encoder and average the two
probability readings.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor
from .data import TextAttributedGraph
from .encoders import (EmbeddingBatch, encode_nodes, encode_texts,
                       encode_texts_with_prefix, node_features_from_texts,
                       normalized_adjacency)
from .pretrain import TrainedModel, AdamState, optimizer_step, substream
from .textproc import batch_texts

DEFAULT_TEMPLATE = "a node of {}"


@dataclass(frozen=True)
class ClassPromptSet:
    """Per-class description strings plus optional learnable prompt vectors."""

    class_ids: tuple[int, ...]
    descriptions: tuple[str, ...]
    prompt_vectors: np.ndarray | None = None

    def with_vectors(self, vectors: np.ndarray) -> "ClassPromptSet":
        return replace(self, prompt_vectors=vectors)


def make_class_prompts(class_ids, class_names,
                       template: str = DEFAULT_TEMPLATE) -> ClassPromptSet:
    ids = tuple(int(c) for c in class_ids)
    return ClassPromptSet(ids, tuple(template.format(class_names[c]) for c in ids))


@dataclass(frozen=True)
class Prediction:
    """Per-class probabilities and the chosen class for one node."""

    class_ids: tuple[int, ...]
    p: np.ndarray
    p_neg: np.ndarray | None
    predicted: int


def _frozen_view(params: ParamSet) -> dict[str, Tensor]:
    """Constant (no-grad) tensors sharing the parameter arrays."""
    return {name: Tensor(p.data) for name, p in params.items()}


def class_embeddings(model: TrainedModel, prompts: ClassPromptSet,
                     prompt_vectors: np.ndarray | Tensor | None = None,
                     namespace: str = "text",
                     params: dict[str, Tensor] | None = None) -> EmbeddingBatch:
    """One embedding row per class description, through the chosen encoder.

    With prompt vectors (continuous mode) they are prepended at the
    embedding level, exactly like the negative prompt.
    """
    if model.vocab is None:
        raise ValueError("model has no vocabulary")
    batch = batch_texts(list(prompts.descriptions), model.vocab, model.dims.max_len)
    if params is None:
        params = _frozen_view(model.params)
    ids = np.asarray(prompts.class_ids)
    if prompt_vectors is None and prompts.prompt_vectors is not None:
        prompt_vectors = prompts.prompt_vectors
    if prompt_vectors is None:
        return encode_texts(batch, params, model.dims, text_ids=ids, namespace=namespace)
    prompt = prompt_vectors if isinstance(prompt_vectors, Tensor) else Tensor(prompt_vectors)
    return encode_texts_with_prefix(batch, params, model.dims, prompt,
                                    text_ids=ids, namespace=namespace)


def negative_class_embeddings(model: TrainedModel,
                              prompts: ClassPromptSet) -> EmbeddingBatch:
    """Class descriptions through the negative encoder and its learned prompt."""
    params = _frozen_view(model.params)
    return class_embeddings(model, prompts, prompt_vectors=params["negprompt.prompt"],
                            namespace="negtext", params=params)


def zero_shot_probs(node_emb: np.ndarray, class_embs: np.ndarray,
                    tau: float) -> np.ndarray:
    """Softmax over node/class cosine similarities scaled by the temperature."""
    class_embs = np.asarray(class_embs, dtype=np.float64)
    if class_embs.ndim != 2 or class_embs.shape[0] < 2:
        raise ValueError("zero_shot_probs: need at least 2 class embeddings")
    node = np.asarray(node_emb, dtype=np.float64).reshape(-1)
    node = node / max(np.linalg.norm(node), ad.NORM_EPS)
    rows = class_embs / np.maximum(
        np.linalg.norm(class_embs, axis=1, keepdims=True), ad.NORM_EPS)
    z = rows @ node / float(tau)
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def probability_average(p: np.ndarray, p_neg: np.ndarray) -> int:
    """Class index maximizing (p + 1 - p_neg) / 2; ties go to the lowest index."""
    p = np.asarray(p, dtype=np.float64)
    p_neg = np.asarray(p_neg, dtype=np.float64)
    if p.shape != p_neg.shape:
        raise ValueError(f"probability_average: lengths {p.shape} vs {p_neg.shape}")
    return int(np.argmax((p + 1.0 - p_neg) / 2.0))


# ---------------------------------------------------------------------------
# node embeddings for inference
# ---------------------------------------------------------------------------


def all_node_embeddings(model: TrainedModel, graph: TextAttributedGraph) -> np.ndarray:
    """Embeddings of every graph node under the frozen model (no gradients)."""
    if model.vocab is None:
        raise ValueError("model has no vocabulary")
    features = node_features_from_texts(graph, model.vocab, model.feature_table,
                                        model.dims.max_len)
    adj = normalized_adjacency(graph.num_nodes, graph.edge_array())
    emb = encode_nodes(adj, features, _frozen_view(model.params), model.dims)
    return emb.vectors.data


# ---------------------------------------------------------------------------
# continuous-prompt tuning
# ---------------------------------------------------------------------------


@dataclass
class TuneResult:
    prompt_vectors: np.ndarray
    support_accuracy: list[float]
    support_loss: list[float]


def few_shot_tune(model: TrainedModel, graph: TextAttributedGraph,
                  support: list[tuple[int, int]], prompts: ClassPromptSet,
                  epochs: int = 50, learning_rate: float = 0.01,
                  seed: int = 0) -> TuneResult:
    """Tune the learnable prompt vectors on the support set, encoders frozen.

    Minimizes the mean cross-entropy of the class probabilities on the
    support nodes; only the prompt vectors receive updates. Returns the
    prompt with the best support accuracy across epochs (ties: latest).
    """
    if not support:
        raise ValueError("few_shot_tune: empty support set")
    node_ids = np.asarray([n for n, _ in support], dtype=np.int64)
    labels = [lab for _, lab in support]
    targets = np.asarray([prompts.class_ids.index(lab) for lab in labels])

    node_embs = all_node_embeddings(model, graph)[node_ids]
    node_const = Tensor(node_embs)
    frozen = _frozen_view(model.params)
    tau = model.tau

    dm = model.dims.model_dim
    m = model.dims.neg_prompt_len
    rng = substream(seed, "tune")
    bound = 1.0 / np.sqrt(dm)
    prompt = Tensor(rng.uniform(-bound, bound, size=(m, dm)), requires_grad=True)
    tuned = ParamSet({"prompt": prompt})

    onehot = np.zeros((len(support), len(prompts.class_ids)))
    onehot[np.arange(len(support)), targets] = 1.0

    def epoch_eval() -> tuple[Tensor, float, float]:
        cls = class_embeddings(model, prompts, prompt_vectors=prompt, params=frozen)
        sims = ad.matmul(node_const, ad.transpose_last2(cls.vectors))
        z = sims / tau
        ce = ad.mean(ad.logsumexp(z) - ad.sum_(z * Tensor(onehot), axis=-1))
        acc = float((np.argmax(z.data, axis=1) == targets).mean())
        return ce, acc, float(ce.data)

    ce, acc, ce_val = epoch_eval()
    best_vectors = prompt.data.copy()
    best_acc = acc
    acc_trace, loss_trace = [acc], [ce_val]

    state = AdamState()
    for _ in range(epochs):
        grads = ad.backward(ce, tuned)
        optimizer_step(tuned, grads, learning_rate, state)
        ce, acc, ce_val = epoch_eval()
        acc_trace.append(acc)
        loss_trace.append(ce_val)
        if acc >= best_acc:
            best_acc = acc
            best_vectors = prompt.data.copy()
    return TuneResult(best_vectors, acc_trace, loss_trace)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def predict_nodes(model: TrainedModel, graph: TextAttributedGraph,
                  node_ids, prompts: ClassPromptSet, mode: str,
                  prob_average: bool | None = None) -> list[Prediction]:
    """Predictions for many nodes, sharing one embedding pass."""
    if mode not in ("fewshot", "zeroshot"):
        raise ValueError(f"unknown prediction mode {mode!r}")
    if mode == "fewshot":
        prob_average = False
    elif prob_average is None:
        prob_average = True
    if prob_average and model.mode != "zeroshot":
        raise ValueError("probability-average needs a zeroshot-mode model "
                         "(the negative encoder is untrained otherwise)")

    node_ids = np.asarray(node_ids, dtype=np.int64).reshape(-1)
    node_embs = all_node_embeddings(model, graph)[node_ids]
    cls = class_embeddings(model, prompts).detached() if mode == "zeroshot" \
        else class_embeddings(model, prompts, prompts.prompt_vectors).detached()
    neg_cls = negative_class_embeddings(model, prompts).detached() if prob_average else None

    out = []
    for row in node_embs:
        p = zero_shot_probs(row, cls, model.tau)
        if prob_average:
            p_neg = zero_shot_probs(row, neg_cls, model.tau)
            chosen = probability_average(p, p_neg)
        else:
            p_neg = None
            chosen = int(np.argmax(p))
        out.append(Prediction(prompts.class_ids, p, p_neg,
                              prompts.class_ids[chosen]))
    return out


def predict(model: TrainedModel, graph: TextAttributedGraph, node_id: int,
            prompts: ClassPromptSet, mode: str,
            prob_average: bool | None = None) -> Prediction:
    """Single-node prediction; deterministic given a frozen model."""
    return predict_nodes(model, graph, [node_id], prompts, mode, prob_average)[0]


def format_predictions(node_ids, truths, predictions: list[Prediction]) -> str:
    """Dump: ``node_id<TAB>true_label<TAB>pred_label<TAB>p_0..p_{C-1}`` per line."""
    lines = []
    for nid, truth, pred in zip(node_ids, truths, predictions):
        probs = "\t".join(f"{v:.9g}" for v in pred.p)
        lines.append(f"{nid}\t{truth}\t{pred.predicted}\t{probs}")
    return "\n".join(lines) + ("\n" if lines else "")
