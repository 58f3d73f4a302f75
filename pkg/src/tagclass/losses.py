"""Training objectives for the dual-encoder model.

All contrastive-style terms share one convention: similarities are cosines,
scaled by a learnable temperature, and the normalizing sum in each
denominator runs over the *other* batch texts only (the matched pair is
excluded), so values can be negative. The margin and semantics-opposite
terms train the negative text encoder; their sum is gated by the
gamma weight, which the training mode fixes to 0 (fewshot) or 1 (zeroshot)
unless explicitly overridden for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import EmbeddingBatch


@dataclass(frozen=True)
class LossWeights:
    """Balance factors, hinge margin, and the temperature's initial value.

    ``gamma=None`` defers to the training mode; an explicit value overrides
    it (used by ablations).
    """

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float | None = None
    margin: float = 0.5
    tau_init: float = 0.07

    def check(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.tau_init <= 0:
            raise ValueError("tau_init must be positive")


def resolve_gamma(weights: LossWeights, mode: str) -> float:
    """Mode rule: fewshot disables semantics negation, zeroshot enables it."""
    if weights.gamma is not None:
        return weights.gamma
    if mode == "fewshot":
        return 0.0
    if mode == "zeroshot":
        return 1.0
    raise ValueError(f"unknown mode {mode!r}")


def _vectors(x) -> Tensor:
    if isinstance(x, EmbeddingBatch):
        return x.vectors
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _temperature(tau) -> Tensor:
    t = tau if isinstance(tau, Tensor) else Tensor(float(tau))
    if not np.all(t.data > 0):
        raise ValueError("temperature must be positive")
    return t


def _offdiag_logsumexp(anchor: Tensor, texts: Tensor, tau: Tensor) -> Tensor:
    """Row-wise log sum over j != i of exp(sim(anchor_i, text_j) / tau)."""
    b = anchor.shape[0]
    sims = ad.cosine_matrix(anchor, texts) / tau
    off = ~np.eye(b, dtype=bool)
    return ad.logsumexp(sims, mask=off)


def contrastive_loss(nodes, texts, tau) -> Tensor:
    """InfoNCE-style alignment of matched node/text rows.

    -(1/B) sum_i log[ exp(sim(n_i, t_i)/tau) / sum_{j!=i} exp(sim(n_i, t_j)/tau) ]
    """
    n, t = _vectors(nodes), _vectors(texts)
    if n.shape[0] != t.shape[0]:
        raise ad.ShapeError(f"contrastive_loss: {n.shape[0]} nodes vs {t.shape[0]} texts")
    if n.shape[0] < 2:
        raise ValueError("contrastive_loss: need a batch of at least 2 "
                         "(the denominator excludes the matched pair)")
    tau = _temperature(tau)
    matched = ad.diagonal(ad.cosine_matrix(n, t)) / tau
    return ad.mean(_offdiag_logsumexp(n, t, tau) - matched)


def node_perturbation_loss(perturbed_nodes, texts, tau) -> Tensor:
    """Contrastive alignment of perturbed node views, averaged over views."""
    views = list(perturbed_nodes)
    if not views:
        raise ValueError("node_perturbation_loss: need at least one view")
    total = contrastive_loss(views[0], texts, tau)
    for view in views[1:]:
        total = total + contrastive_loss(view, texts, tau)
    return total / float(len(views))


def text_matching_loss(nodes, matched: list[np.ndarray], texts, tau) -> Tensor:
    """Alignment of each node with its retrieved similar-text embeddings.

    -(1/B) sum_i log[ sum_k exp(sim(n_i, m_ik)/tau)
                      / sum_{j!=i} exp(sim(n_i, t_j)/tau) ]

    Retrieved vectors are constants (bank snapshots); short per-node lists
    are allowed, empty ones are not.
    """
    n, t = _vectors(nodes), _vectors(texts)
    b = n.shape[0]
    if b != t.shape[0]:
        raise ad.ShapeError(f"text_matching_loss: {b} nodes vs {t.shape[0]} texts")
    if b < 2:
        raise ValueError("text_matching_loss: need a batch of at least 2")
    if len(matched) != b:
        raise ValueError(f"text_matching_loss: {len(matched)} match lists for {b} nodes")
    counts = [np.asarray(m).reshape(-1, n.shape[1]).shape[0] for m in matched]
    if min(counts) == 0:
        raise ValueError(f"text_matching_loss: node {counts.index(0)} has no matches")
    tau = _temperature(tau)

    kmax = max(counts)
    d = n.shape[1]
    stacked = np.zeros((b, kmax, d))
    valid = np.zeros((b, kmax), dtype=bool)
    for i, m in enumerate(matched):
        m = np.asarray(m, dtype=np.float64).reshape(-1, d)
        norms = np.sqrt((m * m).sum(axis=1, keepdims=True))
        stacked[i, :m.shape[0]] = m / np.maximum(norms, ad.NORM_EPS)
        valid[i, :m.shape[0]] = True

    n_hat = ad.reshape(ad.l2_normalize_rows(n), (b, 1, d))
    sims = ad.reshape(ad.matmul(n_hat, Tensor(np.swapaxes(stacked, 1, 2))), (b, kmax))
    numerator = ad.logsumexp(sims / tau, mask=valid)
    return ad.mean(_offdiag_logsumexp(n, t, tau) - numerator)


def margin_loss(nodes, neg_texts, margin: float) -> Tensor:
    """Hinge pushing each node away from its own negative text.

    mean over i and over j != i of
    max(0, margin + sim(n_i, neg_i) - sim(n_i, neg_j)).
    """
    n, t = _vectors(nodes), _vectors(neg_texts)
    b = n.shape[0]
    if b != t.shape[0]:
        raise ad.ShapeError(f"margin_loss: {b} nodes vs {t.shape[0]} negative texts")
    if b < 2:
        raise ValueError("margin_loss: need a batch of at least 2")
    sims = ad.cosine_matrix(n, t)
    own = ad.reshape(ad.diagonal(sims), (b, 1))
    # (own - other) first, so equal similarities give a hinge of exactly margin
    hinge = ad.relu((own - sims) + float(margin))
    off = ~np.eye(b, dtype=bool)
    return ad.sum_(hinge * Tensor(off.astype(np.float64))) / float(b * (b - 1))


def semantics_opposite_loss(texts, neg_texts) -> Tensor:
    """Negated mean L2 distance between each text and its negative text."""
    t, tn = _vectors(texts), _vectors(neg_texts)
    if t.shape != tn.shape:
        raise ad.ShapeError(f"semantics_opposite_loss: shapes {t.shape} vs {tn.shape}")
    if t.shape[0] < 1:
        raise ValueError("semantics_opposite_loss: empty batch")
    return -ad.mean(ad.row_norm(t - tn))


@dataclass
class LossComponents:
    """Scalar terms of one training step; inactive terms stay None."""

    contrastive: Tensor
    node_perturbation: Tensor | None = None
    text_matching: Tensor | None = None
    margin: Tensor | None = None
    semantics_opposite: Tensor | None = None

    def value(self, name: str) -> float:
        t = getattr(self, name)
        return float(t.data) if t is not None else 0.0


def total_loss(components: LossComponents, weights: LossWeights, mode: str) -> Tensor:
    """Weighted objective: CL + alpha*NP + beta*TM + gamma*(ML + SO)."""
    weights.check()
    gamma = resolve_gamma(weights, mode)
    total = components.contrastive
    if weights.alpha != 0.0:
        if components.node_perturbation is None:
            raise ValueError("alpha > 0 but no node-perturbation term was computed")
        total = total + components.node_perturbation * weights.alpha
    if weights.beta != 0.0:
        if components.text_matching is None:
            raise ValueError("beta > 0 but no text-matching term was computed")
        total = total + components.text_matching * weights.beta
    if gamma != 0.0:
        if components.margin is None or components.semantics_opposite is None:
            raise ValueError("gamma > 0 but the semantics-negation terms were not computed")
        total = total + (components.margin + components.semantics_opposite) * gamma
    return total
