"""Small reverse-mode autodiff over float64 numpy arrays.

Every op builds a :class:`Tensor` holding its value, its parents and a
closure that maps the output gradient to parent gradients. ``backward``
walks the graph once in reverse topological order.

Broadcasting follows numpy rules; gradients are summed back to the input
shape. Dropout takes an explicit mask so a graph is deterministic given
its inputs.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "DiffError", "tensor", "param", "constant",
    "matmul", "affine", "add", "sub", "mul", "div", "neg", "square",
    "relu", "tanh", "exp", "log", "abs_", "softmax", "logsumexp",
    "layer_norm", "dropout", "sum_", "mean", "concat", "reshape",
    "transpose", "take_rows", "take_cols", "backward", "check_gradients", "checking",
]


class DiffError(ValueError):
    """Raised for shape mismatches, non-scalar losses and non-finite values."""


_CHECK_FINITE = False


@contextlib.contextmanager
def checking():
    """Within this context every op verifies its output is finite."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = True
    try:
        yield
    finally:
        _CHECK_FINITE = prev


class Tensor:
    __slots__ = ("value", "grad", "parents", "grad_fn", "op", "requires_grad", "name")

    def __init__(self, value, parents=(), grad_fn=None, op="leaf",
                 requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.grad_fn = grad_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.grad = None
        self.name = name
        if _CHECK_FINITE and not np.all(np.isfinite(self.value)):
            raise DiffError(f"non-finite value produced by op '{op}'")

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return not self.parents

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    @property
    def T(self):
        return transpose(self)


def tensor(value, requires_grad=False, name=None):
    return Tensor(value, requires_grad=requires_grad, name=name)


def param(value, name=None):
    """A trainable leaf (copied so later in-place updates do not alias the caller)."""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def constant(value):
    return Tensor(value, requires_grad=False, op="const")


def _lift(x):
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DiffError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape("add", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.value + b.value, (a, b), grad_fn, "add")


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape("sub", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.value - b.value, (a, b), grad_fn, "sub")


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape("mul", a, b)

    def grad_fn(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Tensor(a.value * b.value, (a, b), grad_fn, "mul")


def div(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape("div", a, b)
    out = a.value / b.value

    def grad_fn(g):
        return (_unbroadcast(g / b.value, a.shape),
                _unbroadcast(-g * out / b.value, b.shape))

    return Tensor(out, (a, b), grad_fn, "div")


def neg(a):
    a = _lift(a)
    return Tensor(-a.value, (a,), lambda g: (-g,), "neg")


def square(a):
    a = _lift(a)
    return Tensor(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,), "square")


def relu(a):
    a = _lift(a)
    # subgradient at 0 is 0
    mask = a.value > 0
    return Tensor(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a):
    a = _lift(a)
    out = np.tanh(a.value)
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a):
    a = _lift(a)
    out = np.exp(a.value)
    return Tensor(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = _lift(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.value)
    return Tensor(out, (a,), lambda g: (g / a.value,), "log")


def abs_(a):
    a = _lift(a)
    return Tensor(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),), "abs")


def dropout(a, mask):
    """Multiply by a fixed mask; the mask already carries the 1/(1-rate) scale."""
    a = _lift(a)
    mask = np.asarray(mask, dtype=np.float64)
    _broadcast_shape("dropout", a, Tensor(mask))
    return Tensor(a.value * mask, (a,), lambda g: (_unbroadcast(g * mask, a.shape),), "dropout")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DiffError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def grad_fn(g):
        return g @ b.value.T, a.value.T @ g

    return Tensor(a.value @ b.value, (a, b), grad_fn, "matmul")


def affine(x, weight, bias):
    """``x @ weight + bias`` with a per-row bias."""
    x, weight, bias = _lift(x), _lift(weight), _lift(bias)
    if x.value.ndim != 2 or weight.value.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DiffError(f"affine: incompatible shapes {x.shape} and {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise DiffError(f"affine: bias shape {bias.shape} does not match {weight.shape}")

    def grad_fn(g):
        return g @ weight.value.T, x.value.T @ g, g.sum(axis=0)

    return Tensor(x.value @ weight.value + bias.value, (x, weight, bias), grad_fn, "affine")


def transpose(a):
    a = _lift(a)
    return Tensor(a.value.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape):
    a = _lift(a)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise DiffError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return Tensor(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def take_rows(a, index):
    """Row selection ``a[index]`` (integer, slice or index array)."""
    a = _lift(a)
    out = a.value[index]

    def grad_fn(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        return (full,)

    return Tensor(out, (a,), grad_fn, "take_rows")


def take_cols(a, index):
    """Column selection ``a[:, index]`` of a 2-d tensor."""
    a = _lift(a)
    out = a.value[:, index]

    def grad_fn(g):
        full = np.zeros_like(a.value)
        full[:, index] += g
        return (full,)

    return Tensor(out, (a,), grad_fn, "take_cols")


def concat(tensors: Sequence, axis=-1):
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DiffError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor(out, tensors, grad_fn, "concat")


# ---------------------------------------------------------------- reductions

def sum_(a, axis=None):
    a = _lift(a)
    out = a.value.sum(axis=axis)

    def grad_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out, (a,), grad_fn, "sum")


def mean(a, axis=None):
    a = _lift(a)
    count = a.value.size if axis is None else a.shape[axis]
    return div(sum_(a, axis), float(count))


def logsumexp(a, axis=-1):
    a = _lift(a)
    m = a.value.max(axis=axis, keepdims=True)
    w = np.exp(a.value - m)
    s = w.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = w / s

    def grad_fn(g):
        return (np.expand_dims(g, axis) * soft,)

    return Tensor(out, (a,), grad_fn, "logsumexp")


def softmax(a, temperature=1.0, axis=-1):
    """Softmax of ``a / temperature`` along ``axis``."""
    if temperature <= 0:
        raise DiffError(f"softmax: temperature must be positive, got {temperature}")
    a = _lift(a)
    z = a.value / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner) / temperature,)

    return Tensor(out, (a,), grad_fn, "softmax")


def layer_norm(a, eps=1e-5):
    """Normalise each row to zero mean and unit variance (no affine part)."""
    a = _lift(a)
    x = a.value
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def grad_fn(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gx),)

    return Tensor(out, (a,), grad_fn, "layer_norm")


# ---------------------------------------------------------------- backward

def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None):
    """Back-propagate from a scalar ``loss``.

    Gradients are stored on every node that requires them. When ``params``
    is given, a dict ``{param: grad}`` is returned, with zeros for params
    the loss does not reach.
    """
    if loss.value.size != 1:
        raise DiffError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = _toposort(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.grad_fn is None or node.grad is None:
            continue
        pgrads = node.grad_fn(node.grad)
        for p, g in zip(node.parents, pgrads):
            if not p.requires_grad or g is None:
                continue
            if p.grad is None:
                p.grad = np.array(g, dtype=np.float64).reshape(p.shape)
            else:
                p.grad = p.grad + g
        if node.parents:
            # free intermediate gradients once consumed
            node.grad = None
    if params is None:
        return None
    result = {}
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        result[p] = g
    return result


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor], eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the graph from the current parameter values and must be
    deterministic. Relative error is ``|analytic - numeric| / max(|numeric|, 1e-8)``.
    """
    with checking():
        loss = f()
        grads = backward(loss, params)
        worst = 0.0
        for p in params:
            analytic = grads[p].ravel()
            flat = p.value.reshape(-1)
            numeric = np.empty_like(analytic)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(f().value)
                flat[i] = orig - eps
                down = float(f().value)
                flat[i] = orig
                numeric[i] = (up - down) / (2.0 * eps)
            err = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
            if err.size:
                worst = max(worst, float(err.max()))
    return worst
