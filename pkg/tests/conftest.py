import numpy as np
import pytest

from tagclass.data import TextAttributedGraph


@pytest.fixture
def tiny_graph() -> TextAttributedGraph:
    """3 nodes, 2 edges, 2 classes."""
    return TextAttributedGraph(
        num_nodes=3,
        edges=[(0, 1), (1, 2)],
        texts=["alpha beta", "beta gamma", "gamma delta"],
        labels=[0, 0, 1],
        class_names=["early", "late"],
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


def random_unit_rows(rng: np.random.Generator, b: int, d: int) -> np.ndarray:
    x = rng.standard_normal((b, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)
