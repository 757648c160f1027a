"""A small reverse-mode differentiation core over numpy arrays.

The graph is rebuilt for every instance (a dynamic tape): each operation
creates a :class:`Tensor` that remembers its parents and a closure mapping the
output gradient to one gradient per parent. :meth:`Tensor.backward` replays the
closures in reverse topological order.

All values are float64. ``-inf`` is a legal value for log-domain tensors and
every log-domain primitive propagates zero (never NaN) gradient through it.
"""

from __future__ import annotations

import contextlib
from collections.abc import Callable, Sequence

import numpy as np

NEG_INF = float("-inf")

_GRAD_ENABLED = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Evaluate operations without recording them on the tape."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward: implicit gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(op: str, fn, a, b):
    try:
        return fn(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = _binary("add", np.add, a, b)
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = _binary("sub", np.subtract, a, b)
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = _binary("mul", np.multiply, a, b)
    return _result(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    """Natural log; zero inputs give ``-inf`` and pass zero gradient where unused."""
    a = as_tensor(a)
    with np.errstate(divide="ignore"):
        y = np.log(a.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = g / a.data
        return (np.where(g == 0.0, 0.0, out),)

    return _result(y, (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def maximum(a, c: float) -> Tensor:
    """``max(a, c)`` against a constant; at a tie the constant branch wins."""
    a = as_tensor(a)
    take = a.data > c
    return _result(np.where(take, a.data, c), (a,), lambda g: (np.where(take, g, 0.0),))


def dropout(a, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _result(a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------- reductions / linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    data = _binary("matmul", np.matmul, a, b)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(data, (a, b), backward)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(data, (a,), backward)


def log_sum_exp(a, axis: int = -1) -> Tensor:
    """Differentiable log-sum-exp; an all ``-inf`` slice yields ``-inf`` with zero gradient."""
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ValueError("log_sum_exp over an empty axis")
    hi = np.max(a.data, axis=axis, keepdims=True)
    dead = hi == NEG_INF
    safe = np.where(dead, 0.0, hi)
    e = np.exp(a.data - safe)
    s = e.sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.where(dead, NEG_INF, np.log(np.where(dead, 1.0, s)) + safe)
    weights = np.where(dead, 0.0, e / np.where(dead, 1.0, s))

    def backward(g):
        return (np.expand_dims(g, axis) * weights,)

    return _result(np.squeeze(out, axis=axis), (a,), backward)


def log_add(a, b) -> Tensor:
    """Elementwise ``log(exp(a) + exp(b))``."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        x, y = np.broadcast_arrays(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"log_add: incompatible shapes {a.shape} and {b.shape}") from exc
    hi = np.maximum(x, y)
    lo = np.minimum(x, y)
    dead = hi == NEG_INF
    with np.errstate(invalid="ignore"):
        out = np.where(dead, NEG_INF, hi + np.log1p(np.exp(np.where(dead, 0.0, lo - hi))))
        wa = np.where(dead, 0.0, np.exp(x - np.where(dead, 0.0, out)))
        wb = np.where(dead, 0.0, np.exp(y - np.where(dead, 0.0, out)))
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * wa, a.shape), _unbroadcast(g * wb, b.shape)),
    )


def softmax(a, mask=None, axis: int = -1) -> Tensor:
    """Softmax with an additive mask (0 keeps, ``-inf`` drops).

    Masked entries get probability exactly 0; a fully masked slice is all zeros.
    """
    a = as_tensor(a)
    x = a.data if mask is None else a.data + mask
    hi = np.max(x, axis=axis, keepdims=True)
    dead = hi == NEG_INF
    e = np.exp(x - np.where(dead, 0.0, hi))
    s = e.sum(axis=axis, keepdims=True)
    y = np.where(dead, 0.0, e / np.where(dead, 1.0, s))

    def backward(g):
        return (_unbroadcast(y * (g - np.sum(g * y, axis=axis, keepdims=True)), a.shape),)

    return _result(y, (a,), backward)


def log_softmax(a, mask=None, axis: int = -1, allow_empty: bool = False) -> Tensor:
    """Log-softmax with an additive mask.

    A fully masked slice is an error unless ``allow_empty``, in which case it
    comes out as all ``-inf`` with zero gradient.
    """
    a = as_tensor(a)
    x = a.data if mask is None else a.data + mask
    hi = np.max(x, axis=axis, keepdims=True)
    dead = hi == NEG_INF
    if not allow_empty and dead.any():
        raise ValueError("log_softmax: every entry of a slice is masked")
    shifted = x - np.where(dead, 0.0, hi)
    with np.errstate(divide="ignore"):
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = np.where(dead, NEG_INF, shifted - np.where(dead, 0.0, lse))
    p = np.exp(y)
    live = np.isfinite(x)

    def backward(g):
        g = np.where(live, g, 0.0)
        out = np.where(live, g - p * np.sum(g, axis=axis, keepdims=True), 0.0)
        return (_unbroadcast(out, a.shape),)

    return _result(y, (a,), backward)


# ---------------------------------------------------------------- structural


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(data, tensors, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"stack: incompatible shapes {shapes}") from exc

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(data, tensors, backward)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    data = a.data[index]

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _result(data, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def swapaxes(a, x: int, y: int) -> Tensor:
    a = as_tensor(a)
    return _result(np.swapaxes(a.data, x, y), (a,), lambda g: (np.swapaxes(g, x, y),))


def embedding(weight, ids) -> Tensor:
    """Row lookup ``weight[ids]`` with scatter-add backward."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)
    if weight.ndim != 2:
        raise ShapeError(f"embedding: weight must be 2-D, got {weight.shape}")
    data = weight.data[ids]

    def backward(g):
        out = np.zeros_like(weight.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (out,)

    return _result(data, (weight,), backward)


def masked_max(x, mask) -> Tensor:
    """Max-pool rows of ``x`` over token sets.

    ``x`` has shape ``(..., n, e)`` and ``mask`` shape ``(..., J, n)``; the result
    has shape ``(..., J, e)``. An empty token set pools to the zero vector.
    """
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[:-2] != x.shape[:-2] or mask.shape[-1] != x.shape[-2]:
        raise ShapeError(f"masked_max: mask {mask.shape} does not fit values {x.shape}")
    vals = np.where(mask[..., None], x.data[..., None, :, :], NEG_INF)
    arg = np.argmax(vals, axis=-2)
    empty = ~mask.any(axis=-1)
    data = np.take_along_axis(x.data[..., None, :, :], arg[..., None, :], axis=-2)[..., 0, :]
    data = np.where(empty[..., None], 0.0, data)

    def backward(g):
        g = np.where(empty[..., None], 0.0, g)
        flat_out = np.zeros((int(np.prod(x.shape[:-2])),) + x.shape[-2:])
        flat_arg = arg.reshape((-1,) + arg.shape[-2:])
        flat_g = g.reshape((-1,) + g.shape[-2:])
        rows = np.arange(flat_out.shape[0])[:, None, None]
        cols = np.arange(x.shape[-1])[None, None, :]
        np.add.at(flat_out, (rows, flat_arg, cols), flat_g)
        return (flat_out.reshape(x.shape),)

    return _result(data, (x,), backward)


# ---------------------------------------------------------------- gradient check


def grad_check(params: Sequence[Tensor], loss_fn: Callable[[], Tensor], eps: float = 1e-4,
               floor: float = 1e-6) -> float:
    """Worst relative error between reverse-mode and central-difference gradients.

    ``loss_fn`` must be deterministic. The relative error of one coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("grad_check: loss is not finite")
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            with no_grad():
                flat[k] = orig + eps
                up = loss_fn().item()
                flat[k] = orig - eps
                down = loss_fn().item()
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"grad_check: loss not finite around {p.name}[{k}]")
            numeric = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[k]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
