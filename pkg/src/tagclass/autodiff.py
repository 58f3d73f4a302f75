"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` records the operations that produced it; ``backward`` walks the
resulting graph in reverse topological order and accumulates vector-Jacobian
products. The op set is the closure of what the encoders and losses need:
broadcast arithmetic, (batched) matmul, gathers, softmax/logsumexp, layer
norm, masked pooling, row normalization and norms. Every op checks its
output for non-finite values; ``grad_check`` verifies any scalar loss
against central finite differences.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

NORM_EPS = 1e-12  # guards denominators/gradients at zero vectors
LAYERNORM_EPS = 1e-5

# Toggle for the per-op finite check. Cheap at desk scale; benchmarks may
# clear it.
CHECK_FINITE = True


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(FloatingPointError):
    """A computation produced a non-finite value."""


def _as_array(values, dtype=np.float64) -> np.ndarray:
    return np.asarray(values, dtype=dtype)


class Tensor:
    """A dense float64 array plus the bookkeeping for reverse-mode gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_parents")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _as_array(values)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        # list of (parent Tensor, vjp callable mapping out-grad -> parent-grad)
        self._parents: list[tuple["Tensor", Callable[[np.ndarray], np.ndarray]]] = []

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; constants are wrapped on the fly
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents, op: str) -> Tensor:
    """Assemble an op result, wiring vjps only for grad-requiring parents."""
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by {op}")
    out = Tensor(data)
    for parent, vjp in parents:
        if parent.requires_grad:
            out._parents.append((parent, vjp))
    out.requires_grad = bool(out._parents)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data,
                 [(a, lambda g: _unbroadcast(g, a.shape)),
                  (b, lambda g: _unbroadcast(g, b.shape))], "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data,
                 [(a, lambda g: _unbroadcast(g, a.shape)),
                  (b, lambda g: _unbroadcast(-g, b.shape))], "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data,
                 [(a, lambda g: _unbroadcast(g * b.data, a.shape)),
                  (b, lambda g: _unbroadcast(g * a.data, b.shape))], "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data
    return _make(data,
                 [(a, lambda g: _unbroadcast(g / b.data, a.shape)),
                  (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape))],
                 "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, [(a, lambda g: -g)], "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 1 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    data = np.matmul(a.data, b.data)

    def grad_a(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)

    def grad_b(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)

    return _make(data, [(a, grad_a), (b, grad_b)], "matmul")


def transpose_last2(a: Tensor) -> Tensor:
    if a.data.ndim < 2:
        raise ShapeError(f"transpose_last2: need >= 2 dims, got shape {a.shape}")
    return _make(np.swapaxes(a.data, -1, -2),
                 [(a, lambda g: np.swapaxes(g, -1, -2))], "transpose_last2")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(a.data.reshape(shape), [(a, lambda g: g.reshape(a.shape))], "reshape")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    return _make(data, [(a, lambda g: g * data)], "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return _make(data, [(a, lambda g: g / a.data)], "log")


def relu(a: Tensor) -> Tensor:
    """Elementwise max with 0; subgradient 0 at the kink."""
    keep = a.data > 0.0
    return _make(np.where(keep, a.data, 0.0), [(a, lambda g: g * keep)], "relu")


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    data = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()

    return _make(data, [(a, vjp)], "sum")


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    data = a.data.mean(axis=axis)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g / count, a.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).copy()

    return _make(data, [(a, vjp)], "mean")


# ---------------------------------------------------------------------------
# gathers and joins
# ---------------------------------------------------------------------------


def gather_rows(a: Tensor, ids) -> Tensor:
    """Index rows of ``a`` (axis 0) by an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: ids out of range for {a.shape[0]} rows")
    data = a.data[ids]

    def vjp(g):
        out = np.zeros(a.shape, dtype=np.float64)
        np.add.at(out, ids, g)
        return out

    return _make(data, [(a, vjp)], "gather_rows")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along an axis."""
    ts = list(tensors)
    data = np.concatenate([t.data for t in ts], axis=axis)
    parents = []
    offset = 0
    for t in ts:
        start, stop = offset, offset + t.shape[axis]
        index = [slice(None)] * data.ndim
        index[axis] = slice(start, stop)
        parents.append((t, lambda g, ix=tuple(index): g[ix]))
        offset = stop
    return _make(data, parents, "concat")


def concat_rows(tensors: Iterable[Tensor]) -> Tensor:
    """Concatenate along axis 0."""
    return concat(tensors, axis=0)


def diagonal(a: Tensor) -> Tensor:
    """Main diagonal of a square matrix."""
    if a.data.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"diagonal: need a square matrix, got shape {a.shape}")
    n = a.shape[0]

    def vjp(g):
        out = np.zeros(a.shape, dtype=np.float64)
        out[np.arange(n), np.arange(n)] = g
        return out

    return _make(a.data.diagonal().copy(), [(a, vjp)], "diagonal")


# ---------------------------------------------------------------------------
# reductions with masks, normalizations
# ---------------------------------------------------------------------------


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` marks positions allowed to attend.

    Masked-out positions get probability exactly 0 and zero gradient. Every
    row must keep at least one valid position.
    """
    z = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask.any(axis=-1).all():
            raise ShapeError("softmax: a row has no valid positions")
        zmax = np.max(np.where(mask, z, -np.inf), axis=-1, keepdims=True)
        e = np.where(mask, np.exp(z - zmax), 0.0)
    else:
        zmax = z.max(axis=-1, keepdims=True)
        e = np.exp(z - zmax)
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return p * (g - dot)

    return _make(p, [(a, vjp)], "softmax")


def logsumexp(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """log(sum(exp)) over the last axis, shift-stabilized; optional validity mask."""
    z = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask.any(axis=-1).all():
            raise ShapeError("logsumexp: a row has no valid positions")
        zmax = np.max(np.where(mask, z, -np.inf), axis=-1, keepdims=True)
        e = np.where(mask, np.exp(z - zmax), 0.0)
    else:
        zmax = z.max(axis=-1, keepdims=True)
        e = np.exp(z - zmax)
    total = e.sum(axis=-1, keepdims=True)
    data = (np.log(total) + zmax).squeeze(-1)
    p = e / total  # softmax weights, the exact gradient

    def vjp(g):
        return np.expand_dims(g, -1) * p

    return _make(data, [(a, vjp)], "logsumexp")


def masked_mean_rows(a: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over axis 1 of a (B, T, d) tensor, restricted to mask-true positions."""
    if a.data.ndim != 3:
        raise ShapeError(f"masked_mean_rows: need (B, T, d), got shape {a.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape[:2]:
        raise ShapeError(f"masked_mean_rows: mask shape {mask.shape} does not match {a.shape[:2]}")
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise ShapeError("masked_mean_rows: a row has no valid positions")
    m3 = mask[:, :, None]
    data = (a.data * m3).sum(axis=1) / counts[:, None]

    def vjp(g):
        return m3 * (g[:, None, :] / counts[:, None, None])

    return _make(data, [(a, vjp)], "masked_mean_rows")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    d = a.shape[-1]
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def grad_a(g):
        gx = g * gain.data
        # d/dx of xhat: remove mean and the xhat-projection, scale by inv
        return inv * (gx - gx.mean(axis=-1, keepdims=True)
                      - xhat * (gx * xhat).mean(axis=-1, keepdims=True))

    def grad_gain(g):
        return _unbroadcast(g * xhat, gain.shape)

    def grad_bias(g):
        return _unbroadcast(g, bias.shape)

    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},), "
                         f"got {gain.shape} and {bias.shape}")
    return _make(data, [(a, grad_a), (gain, grad_gain), (bias, grad_bias)], "layer_norm")


def row_norm(a: Tensor) -> Tensor:
    """L2 norm along the last axis; exact forward, gradient guarded at zero."""
    sq = (a.data * a.data).sum(axis=-1)
    norms = np.sqrt(sq)

    def vjp(g):
        denom = np.maximum(norms, NORM_EPS)
        return np.expand_dims(g / denom, -1) * a.data

    return _make(norms, [(a, vjp)], "row_norm")


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each row of the last axis to unit L2 norm (guarded at zero)."""
    norms = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    denom = np.maximum(norms, NORM_EPS)
    y = a.data / denom

    def vjp(g):
        # rows above the guard project out the radial component
        proj = (g * y).sum(axis=-1, keepdims=True)
        grad = (g - y * proj) / denom
        small = norms <= NORM_EPS
        if small.any():
            grad = np.where(small, g / denom, grad)
        return grad

    return _make(y, [(a, vjp)], "l2_normalize_rows")


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of aligned rows; exact 1.0 for identical unit rows."""
    if a.shape != b.shape:
        raise ShapeError(f"cosine_rows: shapes {a.shape} and {b.shape} differ")
    return sum_(mul(l2_normalize_rows(a), l2_normalize_rows(b)), axis=-1)


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs cosine similarity: rows of ``a`` against rows of ``b``."""
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"cosine_matrix: feature dims {a.shape} vs {b.shape} differ")
    return matmul(l2_normalize_rows(a), transpose_last2(l2_normalize_rows(b)))


def negate_grad(a: Tensor) -> Tensor:
    """Identity forward with a sign-flipped gradient.

    Exists only so the CLI gradient self-test can demonstrate a failing check.
    """
    return _make(a.data.copy(), [(a, lambda g: -g)], "negate_grad")


# ---------------------------------------------------------------------------
# parameters, backward, finite-difference check
# ---------------------------------------------------------------------------


class ParamSet:
    """An ordered, uniquely named collection of grad-requiring tensors."""

    def __init__(self, params: Mapping[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        if params:
            for name, t in params.items():
                self.add(name, t)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if not tensor.requires_grad:
            tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def subset(self, prefixes: tuple[str, ...]) -> "ParamSet":
        sub = ParamSet()
        for name, t in self._params.items():
            if name.startswith(prefixes):
                sub._params[name] = t
        return sub


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order  # parents before children


def backward(loss: Tensor, params: ParamSet) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss for every parameter; zeros when unreachable."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        for parent, vjp in node._parents:
            contrib = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    out = {}
    for name, p in params.items():
        out[name] = p.grad if p.grad is not None else np.zeros(p.shape, dtype=np.float64)
        p.grad = None
    return out


def grad_check(loss_fn: Callable[[ParamSet], Tensor], params: ParamSet,
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    analytic = backward(loss_fn(params), params)

    def probe() -> float:
        value = loss_fn(params)
        if value.size != 1 or not np.isfinite(value.data).all():
            raise NumericError("grad_check: non-finite or non-scalar loss during probing")
        return float(value.data)

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = probe()
            flat[i] = orig - eps
            f_minus = probe()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = a_flat[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
