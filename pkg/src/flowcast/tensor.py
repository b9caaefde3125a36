"""Dense float64 tensors with reverse-mode automatic differentiation.

Every value flowing through the forecaster is a :class:`Tensor`: a numpy
array plus an optional gradient and a backpointer into the computation
graph. Operations build the graph eagerly; :func:`backward` walks it in
reverse topological order and accumulates gradients into ``.grad``.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "tensor",
    "param",
    "zeros",
    "no_grad",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "sigmoid",
    "tanh",
    "exp",
    "absolute",
    "sum_",
    "concat",
    "reshape",
    "softmax",
    "backward",
    "l1_loss",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array node in the computation graph.

    ``data`` is never mutated by operations; ``grad`` is populated (and
    accumulated into) by :func:`backward`. ``parents`` holds
    ``(input tensor, grad_fn)`` pairs, where ``grad_fn`` maps the output
    gradient to that input's gradient contribution.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents")

    def __init__(self, data, requires_grad: bool = False, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = parents

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars are promoted to constant tensors.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, idx):
        return _slice(self, idx)


def tensor(data) -> Tensor:
    """Constant tensor (no gradient tracking)."""
    return Tensor(data)


def param(data) -> Tensor:
    """Learnable tensor: participates in gradient computation."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def zeros(*shape: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents) -> Tensor:
    """Wrap an op result, recording parents only when gradients can flow."""
    if _grad_enabled:
        tracked = tuple((p, fn) for p, fn in parents if p.requires_grad)
        if tracked:
            return Tensor(data, requires_grad=True, parents=tracked)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcastable(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# Linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with gradients dA = dC @ B^T, dB = A^T @ dC."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    out = a.data @ b.data
    return _make(out, (
        (a, lambda g, bd=b.data: g @ bd.T),
        (b, lambda g, ad=a.data: ad.T @ g),
    ))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.shape}")
    return _make(a.data.T.copy(), ((a, lambda g: g.T),))


# ---------------------------------------------------------------------------
# Elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b, "add")
    return _make(a.data + b.data, (
        (a, lambda g, s=a.shape: _unbroadcast(g, s)),
        (b, lambda g, s=b.shape: _unbroadcast(g, s)),
    ))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b, "sub")
    return _make(a.data - b.data, (
        (a, lambda g, s=a.shape: _unbroadcast(g, s)),
        (b, lambda g, s=b.shape: -_unbroadcast(g, s)),
    ))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b, "mul")
    return _make(a.data * b.data, (
        (a, lambda g, bd=b.data, s=a.shape: _unbroadcast(g * bd, s)),
        (b, lambda g, ad=a.data, s=b.shape: _unbroadcast(g * ad, s)),
    ))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b, "div")
    return _make(a.data / b.data, (
        (a, lambda g, bd=b.data, s=a.shape: _unbroadcast(g / bd, s)),
        (b, lambda g, ad=a.data, bd=b.data, s=b.shape:
            _unbroadcast(-g * ad / (bd * bd), s)),
    ))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, ((a, lambda g: g * s),))


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp for large |x|.
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, ((a, lambda g, o=out: g * o * (1.0 - o)),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, ((a, lambda g, o=out: g * (1.0 - o * o)),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, ((a, lambda g, o=out: g * o),))


def absolute(a: Tensor) -> Tensor:
    """|x| with subgradient 0 at x == 0 (np.sign's convention)."""
    return _make(np.abs(a.data), ((a, lambda g, s=np.sign(a.data): g * s),))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g, shape=a.shape, axis=axis, keepdims=keepdims):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _make(np.asarray(out), ((a, grad_fn),))


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; all other dimensions must agree."""
    tensors = [(_as_tensor(t)) for t in tensors]
    base = tensors[0]
    for t in tensors[1:]:
        if t.data.ndim != base.data.ndim or any(
            i != axis and t.shape[i] != base.shape[i] for i in range(t.data.ndim)
        ):
            raise ShapeError(
                f"concat axis={axis}: incompatible shapes "
                f"{[t.shape for t in tensors]}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_fn(i):
        lo, hi = offsets[i], offsets[i + 1]

        def fn(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        return fn

    return _make(out, tuple((t, make_fn(i)) for i, t in enumerate(tensors)))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    return _make(a.data.reshape(shape), ((a, lambda g, s=a.shape: g.reshape(s)),))


def _slice(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def grad_fn(g, shape=a.shape, idx=idx):
        full = np.zeros(shape)
        full[idx] = g
        return full

    return _make(np.array(out), ((a, grad_fn),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis``; slices sum to 1."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g, o=out, axis=axis):
        return o * (g - (g * o).sum(axis=axis, keepdims=True))

    return _make(out, ((a, grad_fn),))


# ---------------------------------------------------------------------------
# Autodiff driver

def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from ``loss``.

    ``loss`` must be a scalar. Gradients accumulate across calls; callers
    that want fresh gradients must clear them first (the training loop
    zeroes parameter grads every step).
    """
    if loss.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")

    # Iterative topological sort: training graphs are far deeper than the
    # interpreter's recursion limit.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    # Gradients flow through pass-local scratch storage and are committed
    # into .grad once per node, so repeated backward calls accumulate
    # ∂loss/∂t exactly once per call.
    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        for parent, fn in node.parents:
            contrib = fn(g)
            pid = id(parent)
            flow[pid] = contrib if pid not in flow else flow[pid] + contrib


# ---------------------------------------------------------------------------
# Objective

def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Sum of absolute errors over all entries (a sum, not a mean)."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: shapes differ, {pred.shape} vs {target.shape}")
    return sum_(absolute(sub(pred, target)))
