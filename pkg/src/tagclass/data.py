"""Text-attributed graphs: data model, validation, file IO, synthetic generator.

On-disk format is a directory of three tab-separated files:

* ``nodes.tsv``   — ``id<TAB>label<TAB>text`` per line, UTF-8, no tabs in text
* ``edges.tsv``   — ``src<TAB>dst`` per line with ``src < dst``
* ``classes.tsv`` — ``class_id<TAB>class_name`` per line
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NODES_FILE = "nodes.tsv"
EDGES_FILE = "edges.tsv"
CLASSES_FILE = "classes.tsv"

NOISE_WORD = "noise"


class TagFormatError(ValueError):
    """A dataset file failed to parse; message carries file and record index."""


@dataclass(frozen=True)
class TextAttributedGraph:
    """An undirected graph whose nodes carry a text and a class label.

    Edges are stored once per unordered pair, smaller id first (the
    constructor normalizes orientation). Instances are immutable.
    """

    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    texts: tuple[str, ...]
    labels: tuple[int, ...]
    class_names: tuple[str, ...]

    def __init__(self, num_nodes, edges, texts, labels, class_names):
        object.__setattr__(self, "num_nodes", int(num_nodes))
        canon = tuple((int(a), int(b)) if a <= b else (int(b), int(a)) for a, b in edges)
        object.__setattr__(self, "edges", canon)
        object.__setattr__(self, "texts", tuple(texts))
        object.__setattr__(self, "labels", tuple(int(x) for x in labels))
        object.__setattr__(self, "class_names", tuple(class_names))

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def edge_array(self) -> np.ndarray:
        """Edges as an (E, 2) int64 array (possibly empty)."""
        if not self.edges:
            return np.empty((0, 2), dtype=np.int64)
        return np.asarray(self.edges, dtype=np.int64)

    def nodes_of_class(self, label: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.labels) == label)


def validate(graph: TextAttributedGraph) -> list[str]:
    """All invariant violations, empty when the graph is well-formed.

    Each message names the offending field and index; violations are data,
    not exceptions.
    """
    v: list[str] = []
    n = graph.num_nodes
    if n < 0:
        v.append("num_nodes: negative")
    if len(graph.texts) != n:
        v.append(f"texts: expected {n} entries, found {len(graph.texts)}")
    if len(graph.labels) != n:
        v.append(f"labels: expected {n} entries, found {len(graph.labels)}")
    for i, text in enumerate(graph.texts):
        if "\t" in text or "\n" in text:
            v.append(f"texts[{i}]: contains a tab or newline")
    c = len(graph.class_names)
    for i, label in enumerate(graph.labels):
        if not 0 <= label < c:
            v.append(f"labels[{i}]: {label} outside [0, {c})")
    seen: set[tuple[int, int]] = set()
    for i, (a, b) in enumerate(graph.edges):
        if a == b:
            v.append(f"edges[{i}]: self-loop ({a}, {b})")
            continue
        if not (0 <= a < n and 0 <= b < n):
            v.append(f"edges[{i}]: endpoint out of range in ({a}, {b})")
            continue
        if (a, b) in seen:
            v.append(f"edges[{i}]: duplicate unordered pair ({a}, {b})")
        seen.add((a, b))
    return v


def save_tag(graph: TextAttributedGraph, path) -> None:
    """Write the three-file dataset; output is byte-identical per graph."""
    violations = validate(graph)
    if violations:
        raise ValueError("refusing to save invalid graph: " + "; ".join(violations))
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / NODES_FILE, "w", encoding="utf-8", newline="\n") as f:
        for i in range(graph.num_nodes):
            f.write(f"{i}\t{graph.labels[i]}\t{graph.texts[i]}\n")
    with open(path / EDGES_FILE, "w", encoding="utf-8", newline="\n") as f:
        for a, b in graph.edges:
            f.write(f"{a}\t{b}\n")
    with open(path / CLASSES_FILE, "w", encoding="utf-8", newline="\n") as f:
        for c, name in enumerate(graph.class_names):
            f.write(f"{c}\t{name}\n")


def _parse_int(token: str, where: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise TagFormatError(f"{where}: not an integer: {token!r}") from None


def load_tag(path) -> TextAttributedGraph:
    """Load a dataset directory written by :func:`save_tag`."""
    path = Path(path)
    for name in (NODES_FILE, EDGES_FILE, CLASSES_FILE):
        if not (path / name).is_file():
            raise FileNotFoundError(f"missing dataset file {path / name}")

    class_names: list[str] = []
    with open(path / CLASSES_FILE, encoding="utf-8") as f:
        for lineno, line in enumerate(f):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise TagFormatError(f"{CLASSES_FILE} record {lineno}: expected 2 fields")
            cid = _parse_int(parts[0], f"{CLASSES_FILE} record {lineno}")
            if cid != lineno:
                raise TagFormatError(f"{CLASSES_FILE} record {lineno}: ids must be "
                                     f"consecutive from 0, got {cid}")
            class_names.append(parts[1])

    texts: list[str] = []
    labels: list[int] = []
    with open(path / NODES_FILE, encoding="utf-8") as f:
        for lineno, line in enumerate(f):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise TagFormatError(f"{NODES_FILE} record {lineno}: expected 3 fields")
            nid = _parse_int(parts[0], f"{NODES_FILE} record {lineno}")
            if nid != lineno:
                raise TagFormatError(f"{NODES_FILE} record {lineno}: ids must be "
                                     f"consecutive from 0, got {nid}")
            label = _parse_int(parts[1], f"{NODES_FILE} record {lineno}")
            if not 0 <= label < len(class_names):
                raise TagFormatError(f"{NODES_FILE} record {lineno}: label {label} "
                                     f"outside [0, {len(class_names)})")
            labels.append(label)
            texts.append(parts[2])
    num_nodes = len(texts)

    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    with open(path / EDGES_FILE, encoding="utf-8") as f:
        for lineno, line in enumerate(f):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise TagFormatError(f"{EDGES_FILE} record {lineno}: expected 2 fields")
            a = _parse_int(parts[0], f"{EDGES_FILE} record {lineno}")
            b = _parse_int(parts[1], f"{EDGES_FILE} record {lineno}")
            if not (0 <= a < num_nodes and 0 <= b < num_nodes):
                raise TagFormatError(f"{EDGES_FILE} record {lineno}: edge ({a}, {b}) "
                                     f"endpoint out of range for {num_nodes} nodes")
            if a >= b:
                raise TagFormatError(f"{EDGES_FILE} record {lineno}: edge ({a}, {b}) "
                                     f"must satisfy src < dst")
            if (a, b) in seen:
                raise TagFormatError(f"{EDGES_FILE} record {lineno}: duplicate edge ({a}, {b})")
            seen.add((a, b))
            edges.append((a, b))

    return TextAttributedGraph(num_nodes, edges, texts, labels, class_names)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Planted-partition generator settings.

    Class names are the class keyword lists joined by spaces, so zero-shot
    class descriptions share vocabulary with member texts.
    """

    num_nodes: int = 300
    num_classes: int = 5
    intra_edge_prob: float = 0.2
    inter_edge_prob: float = 0.01
    keywords_per_class: int = 8
    text_length: int = 12
    noise_word_prob: float = 0.15

    def check(self) -> None:
        if self.num_nodes <= 0:
            raise ValueError("num_nodes must be positive")
        if self.num_classes <= 0:
            raise ValueError("num_classes must be positive")
        if self.num_classes > self.num_nodes:
            raise ValueError("num_classes cannot exceed num_nodes")
        if self.keywords_per_class <= 0 or self.text_length <= 0:
            raise ValueError("keywords_per_class and text_length must be positive")
        for name in ("intra_edge_prob", "inter_edge_prob", "noise_word_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")


def class_keywords(config: SynthConfig, label: int) -> list[str]:
    return [f"c{label}w{j}" for j in range(config.keywords_per_class)]


def synth_tag(config: SynthConfig, seed: int) -> TextAttributedGraph:
    """Generate a planted-partition graph with keyword texts.

    Pure function of (config, seed): labels are round-robin, intra-class
    pairs are linked with ``intra_edge_prob`` and inter-class pairs with
    ``inter_edge_prob``, and each text token is drawn from the node's class
    keyword pool then replaced by the shared noise word with
    ``noise_word_prob``.
    """
    config.check()
    rng = np.random.default_rng(seed)
    n, c = config.num_nodes, config.num_classes
    labels = np.arange(n, dtype=np.int64) % c

    rows, cols = np.triu_indices(n, k=1)
    probs = np.where(labels[rows] == labels[cols],
                     config.intra_edge_prob, config.inter_edge_prob)
    keep = rng.random(rows.size) < probs
    edges = list(zip(rows[keep].tolist(), cols[keep].tolist()))

    pools = [class_keywords(config, label) for label in range(c)]
    texts = []
    for i in range(n):
        pool = pools[labels[i]]
        tokens = [pool[j] for j in rng.integers(0, len(pool), size=config.text_length)]
        noisy = rng.random(config.text_length) < config.noise_word_prob
        tokens = [NOISE_WORD if hit else tok for tok, hit in zip(tokens, noisy)]
        texts.append(" ".join(tokens))

    class_names = [" ".join(pool) for pool in pools]
    return TextAttributedGraph(n, edges, texts, labels.tolist(), class_names)
