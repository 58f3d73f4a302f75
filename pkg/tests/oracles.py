"""Independent loop-based oracles used to pin expected loss values.

These deliberately avoid the package's tensor machinery: plain python
loops over numpy rows, naive formulas, no shared helpers.
"""

import math

import numpy as np


def cos(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def oracle_contrastive(nodes, texts, tau) -> float:
    b = len(nodes)
    total = 0.0
    for i in range(b):
        num = math.exp(cos(nodes[i], texts[i]) / tau)
        den = sum(math.exp(cos(nodes[i], texts[j]) / tau)
                  for j in range(b) if j != i)
        total += math.log(num / den)
    return -total / b


def oracle_node_perturbation(views, texts, tau) -> float:
    return sum(oracle_contrastive(v, texts, tau) for v in views) / len(views)


def oracle_text_matching(nodes, matched, texts, tau) -> float:
    b = len(nodes)
    total = 0.0
    for i in range(b):
        num = sum(math.exp(cos(nodes[i], m) / tau) for m in matched[i])
        den = sum(math.exp(cos(nodes[i], texts[j]) / tau)
                  for j in range(b) if j != i)
        total += math.log(num / den)
    return -total / b


def oracle_margin(nodes, neg_texts, margin) -> float:
    b = len(nodes)
    total = 0.0
    for i in range(b):
        inner = 0.0
        for j in range(b):
            if j == i:
                continue
            inner += max(0.0, margin + cos(nodes[i], neg_texts[i])
                         - cos(nodes[i], neg_texts[j]))
        total += inner / (b - 1)
    return total / b


def oracle_semantics_opposite(texts, neg_texts) -> float:
    b = len(texts)
    total = 0.0
    for i in range(b):
        total += float(np.linalg.norm(np.asarray(texts[i]) - np.asarray(neg_texts[i])))
    return -total / b


def oracle_bank_topk(entries, query, k, exclude_id=None):
    """entries: list of (id, seq, vector); returns the top-k (id, vector) pairs."""
    scored = []
    for eid, seq, vec in entries:
        if exclude_id is not None and eid == exclude_id:
            continue
        vec = np.asarray(vec, dtype=np.float64)
        scored.append((float(np.dot(vec, np.asarray(query))), seq, eid, vec))
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [(eid, vec) for _, _, eid, vec in scored[:k]]
