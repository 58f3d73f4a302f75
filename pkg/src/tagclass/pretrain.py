"""Joint pre-training of the graph, text, and negative text encoders.

Each step samples a node batch, aligns node and text embeddings with the
contrastive term, optionally adds perturbed-view and retrieved-text terms,
and in zeroshot mode trains the negative encoder through the margin and
semantics-opposite terms. One seed drives named substreams ("data", "init",
"batch", "perturb", "episode", "tune") so runs are bit-reproducible.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augment import EmptyBankError, PerturbConfig, TextBank, perturb
from .autodiff import NumericError, ParamSet, Tensor
from .checkpoint import load_tensors, save_tensors
from .data import TextAttributedGraph, validate
from .encoders import (EmbeddingBatch, ModelDims, encode_negative_texts,
                       encode_nodes, encode_texts, init_graph_params,
                       init_neg_prompt, init_text_params, make_feature_table,
                       node_features_from_texts, normalized_adjacency)
from .losses import (LossComponents, LossWeights, contrastive_loss,
                     margin_loss, node_perturbation_loss, resolve_gamma,
                     semantics_opposite_loss, text_matching_loss, total_loss)
from .textproc import TokenBatch, Vocab, batch_texts, build_vocab, load_vocab, save_vocab

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("L_CL", "L_NP", "L_TM", "L_ML", "L_SO", "total")

CHECKPOINT_FILE = "model.ckpt"
VOCAB_FILE = "vocab.txt"
CONFIG_FILE = "model.cfg"
METRICS_FILE = "metrics.tsv"


def substream(seed: int, name: str) -> np.random.Generator:
    """A named random stream derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


def subseed(seed: int, name: str, *indices: int) -> int:
    """A derived integer seed for components that take seeds, e.g. perturb."""
    ss = np.random.SeedSequence([seed, zlib.crc32(name.encode()), *indices])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class PretrainConfig:
    mode: str = "zeroshot"                 # "fewshot" | "zeroshot"
    steps: int = 500
    batch_size: int = 16
    learning_rate: float = 2e-4
    weights: LossWeights = field(default_factory=LossWeights)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    matched_texts: int = 1                 # K retrieved per node
    bank_capacity: int = 4096
    vocab_max: int = 512
    seed: int = 0
    dims: ModelDims = field(default_factory=ModelDims)

    def check(self) -> None:
        if self.mode not in ("fewshot", "zeroshot"):
            raise ValueError(f"mode must be fewshot or zeroshot, got {self.mode!r}")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.matched_texts < 1:
            raise ValueError("matched_texts must be at least 1")
        if self.bank_capacity < 1:
            raise ValueError("bank_capacity must be at least 1")
        self.weights.check()
        self.perturb.check()
        self.dims.check()


@dataclass
class TrainedModel:
    """Frozen pre-training output: parameters plus everything prediction needs."""

    mode: str
    dims: ModelDims
    params: ParamSet
    feature_table: np.ndarray
    vocab: Vocab | None
    config: PretrainConfig
    trace: np.ndarray  # (steps, 6) columns per TRACE_COLUMNS

    @property
    def tau(self) -> float:
        return float(np.exp(self.params["loss.log_tau"].data))

    def param_checksum(self, prefixes: tuple[str, ...]) -> float:
        """Order-stable checksum over a parameter namespace, for freeze checks."""
        total = 0.0
        for name, p in self.params.items():
            if name.startswith(prefixes):
                total += float(np.sum(p.data * p.data)) + float(np.sum(p.data))
        return total


def init_params(config: PretrainConfig, seed: int,
                vocab: Vocab | None = None) -> TrainedModel:
    """Untrained model with scaled-uniform weights, deterministic per seed.

    The negative text encoder is an independent draw, not a copy of the
    text encoder.
    """
    config.check()
    dims = config.dims
    if vocab is not None and dims.vocab_size != len(vocab):
        dims = dims.resolved(len(vocab))
        config = replace(config, dims=dims)
    if dims.vocab_size < 2:
        raise ValueError("config.dims.vocab_size must be resolved before init")
    rng = substream(seed, "init")
    feature_table = make_feature_table(dims.vocab_size, dims.graph_input_dim, rng)
    params = ParamSet()
    init_graph_params(params, dims, rng)
    init_text_params(params, "text", dims, rng)
    init_text_params(params, "negtext", dims, rng)
    init_neg_prompt(params, dims, rng)
    params.add("loss.log_tau", Tensor(np.log(config.weights.tau_init), requires_grad=True))
    return TrainedModel(config.mode, dims, params, feature_table, vocab, config,
                        np.empty((0, len(TRACE_COLUMNS))))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators with a shared step counter."""

    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_step(params: ParamSet, grads: dict[str, np.ndarray],
                   learning_rate: float, state: AdamState) -> AdamState:
    """One adaptive-moment update, in place on the parameter arrays."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ad.ShapeError(f"optimizer_step: gradient shape {g.shape} != "
                                f"parameter shape {p.shape} for {name!r}")
        m = state.m.setdefault(name, np.zeros(p.shape))
        v = state.v.setdefault(name, np.zeros(p.shape))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _take_rows(batch: TokenBatch, ids: np.ndarray) -> TokenBatch:
    return TokenBatch(batch.ids[ids], batch.mask[ids])


def pretrain(graph: TextAttributedGraph, config: PretrainConfig) -> TrainedModel:
    """Run the full pre-training loop; deterministic for a fixed config."""
    config.check()
    violations = validate(graph)
    if violations:
        raise ValueError("pretrain: invalid graph: " + "; ".join(violations))
    if config.batch_size > graph.num_nodes:
        raise ValueError(f"batch_size {config.batch_size} exceeds "
                         f"{graph.num_nodes} nodes")

    vocab = build_vocab(list(graph.texts), config.vocab_max)
    model = init_params(config, config.seed, vocab)
    config, dims, params = model.config, model.dims, model.params

    features = node_features_from_texts(graph, vocab, model.feature_table, dims.max_len)
    adj = normalized_adjacency(graph.num_nodes, graph.edge_array())
    tokens = batch_texts(list(graph.texts), vocab, dims.max_len)
    bank = TextBank(config.bank_capacity, dims.embed_dim)

    weights = config.weights
    gamma = resolve_gamma(weights, config.mode)
    active_prefixes = ["graph.", "text.", "loss."]
    if gamma != 0.0:
        active_prefixes += ["negtext.", "negprompt."]
    active = params.subset(tuple(active_prefixes))

    rng_batch = substream(config.seed, "batch")
    state = AdamState()
    trace = np.zeros((config.steps, len(TRACE_COLUMNS)))

    for step in range(config.steps):
        batch_ids = rng_batch.choice(graph.num_nodes, size=config.batch_size,
                                     replace=False)
        try:
            node_all = encode_nodes(adj, features, params, dims)
            n_batch = EmbeddingBatch(batch_ids,
                                     ad.gather_rows(node_all.vectors, batch_ids))
            rows = _take_rows(tokens, batch_ids)
            t_batch = encode_texts(rows, params, dims, text_ids=batch_ids)

            tau = ad.exp(params["loss.log_tau"])
            components = LossComponents(contrastive_loss(n_batch, t_batch, tau))
            step_weights = weights

            if weights.alpha != 0.0:
                views = []
                for view in range(config.perturb.num_views):
                    edges = perturb(graph, config.perturb,
                                    subseed(config.seed, "perturb", step, view))
                    adj_v = normalized_adjacency(graph.num_nodes,
                                                 np.asarray(edges).reshape(-1, 2))
                    emb_v = encode_nodes(adj_v, features, params, dims)
                    views.append(EmbeddingBatch(
                        batch_ids, ad.gather_rows(emb_v.vectors, batch_ids)))
                components.node_perturbation = node_perturbation_loss(
                    views, t_batch, tau)

            bank.push(batch_ids, t_batch.detached())
            if weights.beta != 0.0:
                try:
                    queries = t_batch.detached()
                    matched = [bank.topk(queries[i], config.matched_texts,
                                         exclude_id=int(batch_ids[i])).vectors
                               for i in range(config.batch_size)]
                    components.text_matching = text_matching_loss(
                        n_batch, matched, t_batch, tau)
                except EmptyBankError:
                    logger.info("step %d: bank too small after exclusion, "
                                "skipping the text-matching term", step)
                    step_weights = replace(step_weights, beta=0.0)

            if gamma != 0.0:
                tneg = encode_negative_texts(rows, params, dims, text_ids=batch_ids)
                components.margin = margin_loss(n_batch, tneg, weights.margin)
                components.semantics_opposite = semantics_opposite_loss(t_batch, tneg)

            loss = total_loss(components, step_weights, config.mode)
        except NumericError as exc:
            raise NumericError(f"non-finite loss at step {step}: {exc}") from exc

        grads = ad.backward(loss, active)
        optimizer_step(active, grads, config.learning_rate, state)

        trace[step] = [components.value("contrastive"),
                       components.value("node_perturbation"),
                       components.value("text_matching"),
                       components.value("margin"),
                       components.value("semantics_opposite"),
                       float(loss.data)]
        if not np.isfinite(trace[step]).all():
            raise NumericError(f"non-finite loss at step {step}")

    model.trace = trace
    return model


def format_trace(trace: np.ndarray) -> str:
    """Metrics stream: one line per step, 9-significant-digit values."""
    lines = []
    for step, row in enumerate(trace):
        lines.append(str(step) + "\t" + "\t".join(f"{v:.9g}" for v in row))
    return "\n".join(lines) + ("\n" if len(lines) else "")


# ---------------------------------------------------------------------------
# model persistence
# ---------------------------------------------------------------------------

_CONFIG_KEYS = (
    ("mode", str), ("steps", int), ("batch_size", int), ("learning_rate", float),
    ("matched_texts", int), ("bank_capacity", int), ("vocab_max", int), ("seed", int),
)
_WEIGHT_KEYS = (("alpha", float), ("beta", float), ("margin", float), ("tau_init", float))
_PERTURB_KEYS = (("drop_prob", float), ("add_prob", float), ("num_views", int))
_DIM_KEYS = (
    ("embed_dim", int), ("graph_layers", int), ("graph_input_dim", int),
    ("text_layers", int), ("num_heads", int), ("model_dim", int), ("ff_dim", int),
    ("max_len", int), ("neg_prompt_len", int), ("vocab_size", int),
)


def config_to_flat(config: PretrainConfig) -> dict[str, str]:
    flat: dict[str, str] = {}
    for key, _ in _CONFIG_KEYS:
        flat[key] = str(getattr(config, key))
    for key, _ in _WEIGHT_KEYS:
        flat[key] = repr(getattr(config.weights, key))
    flat["gamma"] = "auto" if config.weights.gamma is None else repr(config.weights.gamma)
    for key, _ in _PERTURB_KEYS:
        flat[key] = str(getattr(config.perturb, key))
    for key, _ in _DIM_KEYS:
        flat[key] = str(getattr(config.dims, key))
    return flat


def config_from_flat(flat: dict[str, str]) -> PretrainConfig:
    known = {k for k, _ in (*_CONFIG_KEYS, *_WEIGHT_KEYS, *_PERTURB_KEYS, *_DIM_KEYS)}
    known.add("gamma")
    unknown = set(flat) - known
    if unknown:
        raise KeyError(f"unknown config keys: {sorted(unknown)}")

    def pick(keys, cast_map=None):
        return {k: cast(flat[k]) for k, cast in keys if k in flat}

    gamma = None
    if flat.get("gamma", "auto") != "auto":
        gamma = float(flat["gamma"])
    weights = LossWeights(gamma=gamma, **pick(_WEIGHT_KEYS))
    pert = PerturbConfig(**pick(_PERTURB_KEYS))
    dims = ModelDims(**pick(_DIM_KEYS))
    base = pick(_CONFIG_KEYS)
    return PretrainConfig(weights=weights, perturb=pert, dims=dims, **base)


def save_model(model: TrainedModel, out_dir) -> None:
    """Write checkpoint, vocabulary, config, and metrics stream to a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensors = {name: p.data for name, p in model.params.items()}
    tensors["features.table"] = model.feature_table
    save_tensors(tensors, out / CHECKPOINT_FILE)
    if model.vocab is None:
        raise ValueError("cannot save a model without a vocabulary")
    save_vocab(model.vocab, out / VOCAB_FILE)
    with open(out / CONFIG_FILE, "w", encoding="utf-8", newline="\n") as f:
        for key, value in config_to_flat(model.config).items():
            f.write(f"{key} = {value}\n")
    with open(out / METRICS_FILE, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_trace(model.trace))


def load_model(model_dir) -> TrainedModel:
    """Reload a model directory written by :func:`save_model`."""
    model_dir = Path(model_dir)
    flat: dict[str, str] = {}
    cfg_path = model_dir / CONFIG_FILE
    if not cfg_path.is_file():
        raise FileNotFoundError(f"missing model config {cfg_path}")
    with open(cfg_path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            flat[key.strip()] = value.strip()
    config = config_from_flat(flat)
    vocab = load_vocab(model_dir / VOCAB_FILE)
    tensors = load_tensors(model_dir / CHECKPOINT_FILE)
    feature_table = tensors.pop("features.table")
    params = ParamSet()
    for name, array in tensors.items():
        params.add(name, Tensor(array, requires_grad=True))
    trace = np.empty((0, len(TRACE_COLUMNS)))
    metrics_path = model_dir / METRICS_FILE
    if metrics_path.is_file():
        rows = []
        with open(metrics_path, encoding="utf-8") as f:
            for line in f:
                parts = line.split("\t")
                if len(parts) == len(TRACE_COLUMNS) + 1:
                    rows.append([float(v) for v in parts[1:]])
        if rows:
            trace = np.asarray(rows)
    return TrainedModel(config.mode, config.dims, params, feature_table,
                        vocab, config, trace)
