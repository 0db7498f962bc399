"""Dense tensors with reverse-mode automatic differentiation.

The computation graph is define-by-run: every operation returns a new
``Tensor`` that remembers its parents and a closure propagating the
upstream gradient to them.  ``Tensor.backward()`` walks the recorded
graph once, in reverse topological order, accumulating gradients into
``.grad`` of every reachable tensor with ``requires_grad``.

All data is float64.  Tensors are treated as immutable after creation;
parameter updates replace ``.data`` with a fresh array between steps.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when operand shapes do not conform to an op's shape rule."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(
            "%s: incompatible shapes %s" % (op, " vs ".join(str(tuple(s)) for s in shapes))
        )


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        self._op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return "Tensor(op=%s, shape=%s, requires_grad=%s)" % (
            self._op,
            self.data.shape,
            self.requires_grad,
        )

    # graph traversal ---------------------------------------------------

    def _toposort(self) -> list["Tensor"]:
        # Iterative DFS; each node appears once, parents before children.
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        return order

    def backward(self) -> None:
        """Populate ``.grad`` for every tensor on a path to this scalar."""
        if self.data.size != 1:
            raise ValueError(
                "backward() requires a scalar loss, got shape %s" % (self.data.shape,)
            )
        if not self.requires_grad:
            return
        self.grad = np.ones_like(self.data)
        for node in reversed(self._toposort()):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def zero_grad(self) -> None:
        self.grad = None

    # operator sugar ----------------------------------------------------

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

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return take(self, idx)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeMismatchError(op, a.data.shape, b.data.shape) from None


# elementwise -------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    out = Tensor(a.data + b.data, parents=(a, b), op="add")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    out._backward_fn = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    out = Tensor(a.data - b.data, parents=(a, b), op="sub")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    out._backward_fn = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    out = Tensor(a.data * b.data, parents=(a, b), op="mul")

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward_fn = backward
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("div", a, b)
    out = Tensor(a.data / b.data, parents=(a, b), op="div")

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward_fn = backward
    return out


def power(a: Tensor, exponent: float) -> Tensor:
    out = Tensor(a.data**exponent, parents=(a,), op="pow")

    def backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1))

    out._backward_fn = backward
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data), parents=(a,), op="exp")

    def backward(g):
        _accumulate(a, g * out.data)

    out._backward_fn = backward
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), parents=(a,), op="log")

    def backward(g):
        _accumulate(a, g / a.data)

    out._backward_fn = backward
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data), parents=(a,), op="tanh")

    def backward(g):
        _accumulate(a, g * (1.0 - out.data * out.data))

    out._backward_fn = backward
    return out


def sigmoid(a: Tensor) -> Tensor:
    # Stable two-branch form; avoids overflow for large |x|.
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(out_data, parents=(a,), op="sigmoid")

    def backward(g):
        _accumulate(a, g * out.data * (1.0 - out.data))

    out._backward_fn = backward
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), parents=(a,), op="relu")

    def backward(g):
        _accumulate(a, g * (a.data > 0))

    out._backward_fn = backward
    return out


def swish(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    return mul(a, sigmoid(a))


# matmul and shaping ------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError("matmul", a.data.shape, b.data.shape)
    out = Tensor(a.data @ b.data, parents=(a, b), op="matmul")

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out._backward_fn = backward
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatchError("transpose", a.data.shape)
    out = Tensor(a.data.T, parents=(a,), op="transpose")

    def backward(g):
        _accumulate(a, g.T)

    out._backward_fn = backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), parents=(a,), op="reshape")

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    out._backward_fn = backward
    return out


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = Tensor(np.broadcast_to(a.data, shape).copy(), parents=(a,), op="broadcast_to")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))

    out._backward_fn = backward
    return out


def take(a: Tensor, idx) -> Tensor:
    """Basic slicing/indexing; gradient scatters back into place."""
    out = Tensor(a.data[idx], parents=(a,), op="slice")

    def backward(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    out._backward_fn = backward
    return out


def take_rows(table: Tensor, ids) -> Tensor:
    """Row lookup (embedding gather); gradient adds into the looked-up rows."""
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids], parents=(table,), op="take_rows")

    def backward(g):
        if not table.requires_grad:
            return
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accumulate(table, full)

    out._backward_fn = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors), op="concat")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    out._backward_fn = backward
    return out


# reductions ---------------------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,), op="reduce_sum")

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    out._backward_fn = backward
    return out


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), parents=(a,), op="reduce_mean")
    count = a.data.size if axis is None else np.prod([a.data.shape[ax] for ax in np.atleast_1d(axis)])

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape) / count)

    out._backward_fn = backward
    return out


def cumulative_sum(a: Tensor, axis: int = 0) -> Tensor:
    out = Tensor(np.cumsum(a.data, axis=axis), parents=(a,), op="cumulative_sum")

    def backward(g):
        flipped = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        _accumulate(a, flipped)

    out._backward_fn = backward
    return out


# softmax family ------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(out_data, parents=(a,), op="softmax")

    def backward(g):
        y = out.data
        _accumulate(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    out._backward_fn = backward
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(shifted - lse, parents=(a,), op="log_softmax")

    def backward(g):
        y = np.exp(out.data)
        _accumulate(a, g - y * g.sum(axis=axis, keepdims=True))

    out._backward_fn = backward
    return out


def masked_softmax(a: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax with excluded positions receiving exactly zero weight.

    ``mask`` is a boolean array broadcastable to ``a``; True marks positions
    that participate.  Every row must contain at least one True entry.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.data.shape)
    if not mask.any(axis=axis).all():
        raise ValueError("masked_softmax: a row has no unmasked position")
    neg = np.where(mask, a.data, -np.inf)
    shifted = neg - neg.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    out_data = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(out_data, parents=(a,), op="masked_softmax")

    def backward(g):
        y = out.data
        _accumulate(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    out._backward_fn = backward
    return out


# convolution ---------------------------------------------------------------


def _pad_time(x: np.ndarray, pad_left: int, pad_right: int) -> np.ndarray:
    if pad_left == 0 and pad_right == 0:
        return x
    return np.pad(x, ((pad_left, pad_right), (0, 0)))


def conv1d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    pad_left: int = 0,
    pad_right: int = 0,
) -> Tensor:
    """1-D convolution over time.

    ``x`` is [T, C_in], ``kernel`` is [k, C_in, C_out]; output row t reads the
    zero-padded input window starting at ``t * stride``.
    """
    if x.data.ndim != 2 or kernel.data.ndim != 3 or x.data.shape[1] != kernel.data.shape[1]:
        raise ShapeMismatchError("conv1d", x.data.shape, kernel.data.shape)
    k, c_in, c_out = kernel.data.shape
    xp = _pad_time(x.data, pad_left, pad_right)
    t_out = (xp.shape[0] - k) // stride + 1
    if t_out < 1:
        raise ShapeMismatchError("conv1d", x.data.shape, kernel.data.shape)
    idx = np.arange(t_out)[:, None] * stride + np.arange(k)[None, :]
    patches = xp[idx]  # [T_out, k, C_in]
    w2 = kernel.data.reshape(k * c_in, c_out)
    out_data = patches.reshape(t_out, k * c_in) @ w2
    if bias is not None:
        out_data = out_data + bias.data
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    out = Tensor(out_data, parents=parents, op="conv1d")

    def backward(g):
        if kernel.requires_grad:
            gw = patches.reshape(t_out, k * c_in).T @ g
            _accumulate(kernel, gw.reshape(k, c_in, c_out))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))
        if x.requires_grad:
            gp = (g @ w2.T).reshape(t_out, k, c_in)
            gxp = np.zeros_like(xp)
            for j in range(k):
                np.add.at(gxp, np.arange(t_out) * stride + j, gp[:, j, :])
            t = x.data.shape[0]
            _accumulate(x, gxp[pad_left : pad_left + t])

    out._backward_fn = backward
    return out


def depthwise_conv1d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    pad_left: int = 0,
    pad_right: int = 0,
) -> Tensor:
    """Per-channel 1-D convolution; ``kernel`` is [k, C]."""
    if x.data.ndim != 2 or kernel.data.ndim != 2 or x.data.shape[1] != kernel.data.shape[1]:
        raise ShapeMismatchError("depthwise_conv1d", x.data.shape, kernel.data.shape)
    k, c = kernel.data.shape
    xp = _pad_time(x.data, pad_left, pad_right)
    t_out = (xp.shape[0] - k) // stride + 1
    if t_out < 1:
        raise ShapeMismatchError("depthwise_conv1d", x.data.shape, kernel.data.shape)
    idx = np.arange(t_out)[:, None] * stride + np.arange(k)[None, :]
    patches = xp[idx]  # [T_out, k, C]
    out_data = np.einsum("tkc,kc->tc", patches, kernel.data)
    if bias is not None:
        out_data = out_data + bias.data
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    out = Tensor(out_data, parents=parents, op="depthwise_conv1d")

    def backward(g):
        if kernel.requires_grad:
            _accumulate(kernel, np.einsum("tkc,tc->kc", patches, g))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))
        if x.requires_grad:
            gp = np.einsum("tc,kc->tkc", g, kernel.data)
            gxp = np.zeros_like(xp)
            for j in range(k):
                np.add.at(gxp, np.arange(t_out) * stride + j, gp[:, j, :])
            t = x.data.shape[0]
            _accumulate(x, gxp[pad_left : pad_left + t])

    out._backward_fn = backward
    return out


# gradient control -----------------------------------------------------------


def stop_gradient(a: Tensor) -> Tensor:
    """Detach: same values, no gradient flows through this edge."""
    return Tensor(a.data, requires_grad=False, op="stop_gradient")


def gradients(loss: Tensor, params: dict) -> dict:
    """Run backward on a scalar loss and return {name: gradient array}.

    Parameters absent from the graph get a zero gradient.
    """
    for p in params.values():
        p.zero_grad()
    loss.backward()
    return {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def finite_difference_gradient(f, x: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar-valued f at x, coordinate-wise."""
    x0 = x.data
    grad = np.zeros_like(x0)
    flat = grad.reshape(-1)
    for i in range(x0.size):
        bumped = x0.copy().reshape(-1)
        bumped[i] += h
        f_plus = _as_float(f(Tensor(bumped.reshape(x0.shape))))
        bumped[i] -= 2 * h
        f_minus = _as_float(f(Tensor(bumped.reshape(x0.shape))))
        flat[i] = (f_plus - f_minus) / (2 * h)
    return grad


def _as_float(value) -> float:
    if isinstance(value, Tensor):
        return float(value.data)
    return float(value)
