"""Named-tensor container file.

Each tensor is a two-line block: a header ``name dim dim ...`` (bare name
for scalars) and one line of space-separated ``repr`` floats in row-major
order. ``repr`` round-trips doubles exactly, so identical values always
produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np


def save_tensors(tensors: Mapping[str, np.ndarray], path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="\n") as f:
        for name, array in tensors.items():
            array = np.asarray(array, dtype=np.float64)
            dims = " ".join(str(d) for d in array.shape)
            f.write(name + (" " + dims if dims else "") + "\n")
            f.write(" ".join(repr(v) for v in array.reshape(-1).tolist()) + "\n")


def load_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing checkpoint file {path}")
    out: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if len(lines) % 2 != 0:
        raise ValueError(f"{path}: truncated container (odd line count)")
    for i in range(0, len(lines), 2):
        parts = lines[i].split(" ")
        name, dims = parts[0], tuple(int(d) for d in parts[1:])
        values = np.array([float(v) for v in lines[i + 1].split()], dtype=np.float64)
        expect = int(np.prod(dims)) if dims else 1
        if values.size != expect:
            raise ValueError(f"{path}: tensor {name!r} has {values.size} values, "
                             f"expected {expect}")
        out[name] = values.reshape(dims)
    return out
