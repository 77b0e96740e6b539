"""Dense tensors with tape-based reverse-mode differentiation.

The operation set is deliberately small: exactly what the attention layers
and their losses need. Tensors are numpy-backed; every operation records
its parents and a closure that routes the output gradient back to them,
and :class:`Tape` replays those closures in reverse creation order.
Gradients accumulate additively when a tensor is consumed more than once.

Double precision is the default dtype (finite-difference checks need it);
single precision is available by constructing leaf tensors as float32,
which then propagates through the graph.
"""

from __future__ import annotations

import itertools
import threading
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateRowError,
    DimensionError,
    NormalizationError,
)

__all__ = [
    "Tensor",
    "Tape",
    "no_grad",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "transpose",
    "reshape",
    "concat",
    "gather_rows",
    "scatter_rows",
    "rows_inner",
    "tsum",
    "mean",
    "exp",
    "log",
    "clamp",
    "sigmoid",
    "elu",
    "leaky_relu",
    "softmax",
    "masked_softmax",
    "kl_div",
]

NEG_INF = float("-inf")

_ids = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables tape recording (pure inference)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A dense array plus the bookkeeping reverse mode needs.

    Leaf tensors wrap user data; operation outputs additionally hold their
    parent tensors and a backward closure. Tensors are treated as
    immutable after creation, except for explicit in-place optimizer
    updates on leaf parameters between passes.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward = None
        self._id = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """A detached copy of the underlying values."""
        return np.array(self.data, copy=True)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; scalars and ndarrays are wrapped as constants and
    # python scalars adopt the tensor's dtype so float32 graphs stay float32.
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, _as_tensor(1.0 / other, self.dtype))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x, scalar_dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if scalar_dtype is not None and isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=scalar_dtype))
    return Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(np.broadcast_to(g, t.shape), dtype=t.data.dtype)
    else:
        t.grad += g


class Tape:
    """The ordered record of operations reachable from a root tensor.

    Nodes are replayed in exact reverse creation order, which is a valid
    (and deterministic) reverse topological order of the recorded graph.
    """

    def __init__(self, root: Tensor):
        self.root = root
        nodes = []
        seen = set()
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            if node._backward is not None:
                nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda n: n._id, reverse=True)
        self.nodes = nodes

    def run(self):
        """Propagate d(root)/d(root) = 1 back through every recorded op."""
        root = self.root
        if root.shape != ():
            raise ContractError(f"backward root must be scalar, got shape {root.shape}")
        _accumulate(root, np.ones((), dtype=root.data.dtype))
        for node in self.nodes:
            if node.grad is None:
                continue
            node._backward(node.grad)


def backward(loss: Tensor):
    """Run reverse mode from a scalar loss, accumulating into `.grad`."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    Tape(loss).run()


# ---------------------------------------------------------------------------
# Primitive operations
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bwd, "mul")


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), bwd, "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 2-D or batched 3-D on the leading axis."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _make(data, (a, b), bwd, "matmul")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        _accumulate(a, np.transpose(g, inverse))

    return _make(np.transpose(a.data, axes), (a,), bwd, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    def bwd(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bwd, "reshape")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ContractError("concat of an empty sequence")
    data = np.concatenate([t.data for t in ts], axis=axis)
    offsets = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bwd(g):
        for t, piece in zip(ts, np.split(g, offsets, axis=axis)):
            _accumulate(t, piece)

    return _make(data, ts, bwd, "concat")


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows (entries, for 1-D input) along axis 0; duplicates allowed."""
    idx = np.asarray(indices, dtype=np.intp)
    data = a.data[idx]

    def bwd(g):
        if not a.requires_grad:
            return
        full = np.zeros(a.shape, dtype=a.data.dtype)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make(data, (a,), bwd, "gather_rows")


def scatter_rows(a: Tensor, indices, n_rows: int) -> Tensor:
    """Place rows of `a` at `indices` in a zero tensor of `n_rows` rows.

    Indices must be unique; overlapping scatters would be order-dependent.
    """
    idx = np.asarray(indices, dtype=np.intp)
    if len(np.unique(idx)) != len(idx):
        raise ContractError("scatter_rows requires unique indices")
    data = np.zeros((n_rows,) + a.shape[1:], dtype=a.data.dtype)
    data[idx] = a.data

    def bwd(g):
        _accumulate(a, g[idx])

    return _make(data, (a,), bwd, "scatter_rows")


def rows_inner(h: Tensor, idx_a, idx_b) -> Tensor:
    """Per-row inner products <h[idx_a[i]], h[idx_b[i]]> as one fused op.

    Equivalent to gather/gather/mul/sum but avoids materializing the large
    intermediates twice; this is the hot path of the pair losses.
    """
    ia = np.asarray(idx_a, dtype=np.intp)
    ib = np.asarray(idx_b, dtype=np.intp)
    left = h.data[ia]
    right = h.data[ib]
    data = np.einsum("ij,ij->i", left, right)

    def bwd(g):
        if not h.requires_grad:
            return
        full = np.zeros(h.shape, dtype=h.data.dtype)
        np.add.at(full, ia, g[:, None] * right)
        np.add.at(full, ib, g[:, None] * left)
        _accumulate(h, full)

    return _make(data, (h,), bwd, "rows_inner")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape).astype(a.data.dtype, copy=False))

    return _make(data, (a,), bwd, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bwd(g):
        _accumulate(a, g * data)

    return _make(data, (a,), bwd, "exp")


def log(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), bwd, "log")


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    data = np.clip(a.data, lo, hi)
    passthrough = np.ones(a.shape, dtype=bool)
    if lo is not None:
        passthrough &= a.data >= lo
    if hi is not None:
        passthrough &= a.data <= hi

    def bwd(g):
        _accumulate(a, g * passthrough)

    return _make(data, (a,), bwd, "clamp")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    data = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bwd(g):
        _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), bwd, "sigmoid")


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    x = a.data
    data = np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))

    def bwd(g):
        _accumulate(a, g * np.where(x > 0, 1.0, data + alpha))

    return _make(data, (a,), bwd, "elu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    x = a.data
    data = np.where(x > 0, x, slope * x)

    def bwd(g):
        _accumulate(a, g * np.where(x > 0, 1.0, slope))

    return _make(data, (a,), bwd, "leaky_relu")


def masked_softmax(logits: Tensor, mask: Tensor | None = None) -> Tensor:
    """Softmax over the last axis with an optional additive {0, -inf} mask.

    Masked positions come out exactly 0 and receive no gradient. Rows are
    stabilized by subtracting their (unmasked) maximum before exponentiation.
    Unmasked logits must be finite; a row with every position masked is an
    error because its distribution is undefined.
    """
    if mask is not None:
        if mask.requires_grad:
            raise ContractError("softmax masks are constants and cannot require gradients")
        z = logits.data + mask.data
    else:
        z = logits.data
    masked = np.isneginf(z)
    if masked.all(axis=-1).any():
        raise DegenerateRowError("softmax row with every position masked")
    finite_ok = np.isfinite(np.where(masked, 0.0, z))
    if not finite_ok.all():
        raise ContractError("non-finite softmax logits outside the mask")
    zmax = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(logits, data * (g - inner))

    parents = (logits,) if mask is None else (logits, mask)
    return _make(data, parents, bwd, "masked_softmax")


def softmax(logits: Tensor) -> Tensor:
    return masked_softmax(logits, None)


def kl_div(p: Tensor, q: Tensor, floor: float = 1e-12) -> Tensor:
    """KL(p || q) = sum p_i * ln(p_i / q_i) for two distributions.

    Inputs must be strictly positive and sum to 1 within 1e-6. Values are
    floored at 1e-12 before the log so softmax underflow cannot produce
    infinities.
    """
    for name, t in (("p", p), ("q", q)):
        if (t.data <= 0).any():
            raise NormalizationError(f"kl_div {name} must be strictly positive")
        total = float(t.data.sum())
        if abs(total - 1.0) > 1e-6:
            raise NormalizationError(f"kl_div {name} sums to {total}, expected 1")
    return tsum(mul(p, sub(log(clamp(p, lo=floor)), log(clamp(q, lo=floor)))))


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.isfinite(t.data).all():
        raise ContractError(f"{what} contains non-finite values")
    return t
