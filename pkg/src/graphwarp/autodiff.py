"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation records an :class:`OpNode` holding its inputs
and whatever activations its backward rule needs. Backward rules live in the
module-level :data:`BACKWARD_RULES` registry keyed by op kind, which keeps
them swappable (the gradient-check tooling uses this for fault injection).
"""

from contextlib import contextmanager
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .exceptions import EmptySoftmaxError, NumericError, RankError, ShapeError

DTYPE = np.float64


class OpNode:
    """Provenance record of one forward operation."""

    __slots__ = ("kind", "inputs", "saved")

    def __init__(self, kind: str, inputs: Sequence["Tensor"], **saved):
        self.kind = kind
        self.inputs = tuple(inputs)
        self.saved = saved

    def __repr__(self):
        return f"OpNode({self.kind!r}, n_inputs={len(self.inputs)})"


class Tensor:
    """
    A float64 array that optionally participates in a differentiation graph.

    Leaves created with ``requires_grad=True`` own a ``grad`` array of the same
    shape, zero-initialised and accumulated into by :meth:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "node", "name")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 _node: Optional[OpNode] = None):
        self.data = np.array(data, dtype=DTYPE, copy=True) if _node is None else data
        self.requires_grad = bool(requires_grad)
        self.node = _node
        self.name = name
        self.grad = np.zeros_like(self.data) if (requires_grad and _node is None) else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self):
        backward(self)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

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
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_reduce(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    """Wrap arrays and scalars as constant (untracked) tensors."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(kind: str, data: np.ndarray, inputs: Sequence[Tensor], **saved) -> Tensor:
    tracked = any(t.requires_grad for t in inputs)
    node = OpNode(kind, inputs, **saved) if tracked else None
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=DTYPE)
    out.requires_grad = tracked
    out.node = node
    out.name = None
    out.grad = None
    return out


def unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    shape = tuple(shape)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# forward operations

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make("add", a.data + b.data, (a, b))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make("sub", a.data - b.data, (a, b))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make("mul", a.data * b.data, (a, b))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    return _make("matmul", out, (a, b))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes}") from exc
    sizes = [t.shape[axis] for t in tensors]
    return _make("concat", out, tensors, axis=axis, sizes=sizes)


def sum_reduce(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return _make("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,),
                 axis=axis, keepdims=keepdims)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make("tanh", y, (a,), y=y)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make("sigmoid", y, (a,), y=y)


def relu(a) -> Tensor:
    a = as_tensor(a)
    positive = a.data > 0
    return _make("relu", np.where(positive, a.data, 0.0), (a,), positive=positive)


def softplus(a) -> Tensor:
    """log(1 + exp(x)), evaluated without overflow."""
    a = as_tensor(a)
    x = a.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _make("softplus", y, (a,))


def softmax_masked(logits, mask, axis: int = -1, allow_empty: bool = False) -> Tensor:
    """
    Softmax along ``axis`` restricted to entries where ``mask`` is true.

    Masked-out entries are exactly zero. A slice with no true entry raises
    :class:`EmptySoftmaxError` unless ``allow_empty`` is set, in which case the
    whole slice is zero.
    """
    logits = as_tensor(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    x = np.where(mask, logits.data, -np.inf)
    top = x.max(axis=axis, keepdims=True)
    empty = ~np.isfinite(top)
    if empty.any() and not allow_empty:
        raise EmptySoftmaxError("softmax over a slice with every entry masked out")
    top = np.where(empty, 0.0, top)
    e = np.where(mask, np.exp(np.where(mask, logits.data, 0.0) - top), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    y = e / np.where(empty, 1.0, denom)
    return _make("softmax_masked", y, (logits,), y=y, axis=axis)


def slice_(a, index) -> Tensor:
    a = as_tensor(a)
    return _make("slice", a.data[index], (a,), index=index)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {a.shape} to {tuple(shape)}") from None
    return _make("broadcast", out, (a,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _make("reshape", out, (a,))


def transpose(a, axes=None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        axes = list(range(a.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    return _make("transpose", np.transpose(a.data, axes), (a,), axes=axes)


def mean(a) -> Tensor:
    a = as_tensor(a)
    return mul(sum_reduce(a), 1.0 / a.data.size)


# --------------------------------------------------------------------------
# backward rules: rule(node, grad_out) -> one gradient (or None) per input

def _add_backward(node, g):
    a, b = node.inputs
    return unbroadcast(g, a.shape), unbroadcast(g, b.shape)


def _sub_backward(node, g):
    a, b = node.inputs
    return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)


def _neg_backward(node, g):
    return (-g,)


def _mul_backward(node, g):
    a, b = node.inputs
    ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
    gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
    return ga, gb


def _matmul_backward(node, g):
    a, b = node.inputs
    ga = gb = None
    if a.requires_grad:
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
    if b.requires_grad:
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
    return ga, gb


def _concat_backward(node, g):
    cuts = np.cumsum(node.saved["sizes"])[:-1]
    return tuple(np.split(g, cuts, axis=node.saved["axis"]))


def _sum_backward(node, g):
    (a,) = node.inputs
    axis, keepdims = node.saved["axis"], node.saved["keepdims"]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _tanh_backward(node, g):
    y = node.saved["y"]
    return (g * (1.0 - y * y),)


def _sigmoid_backward(node, g):
    y = node.saved["y"]
    return (g * y * (1.0 - y),)


def _relu_backward(node, g):
    return (np.where(node.saved["positive"], g, 0.0),)


def _softplus_backward(node, g):
    (a,) = node.inputs
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return (g * s,)


def _softmax_backward(node, g):
    y, axis = node.saved["y"], node.saved["axis"]
    return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


def _slice_backward(node, g):
    (a,) = node.inputs
    out = np.zeros_like(a.data)
    np.add.at(out, node.saved["index"], g)
    return (out,)


def _broadcast_backward(node, g):
    (a,) = node.inputs
    return (unbroadcast(g, a.shape),)


def _reshape_backward(node, g):
    (a,) = node.inputs
    return (g.reshape(a.shape),)


def _transpose_backward(node, g):
    return (np.transpose(g, np.argsort(node.saved["axes"])),)


BACKWARD_RULES: Dict[str, Callable] = {
    "add": _add_backward,
    "sub": _sub_backward,
    "neg": _neg_backward,
    "mul": _mul_backward,
    "matmul": _matmul_backward,
    "concat": _concat_backward,
    "sum": _sum_backward,
    "tanh": _tanh_backward,
    "sigmoid": _sigmoid_backward,
    "relu": _relu_backward,
    "softplus": _softplus_backward,
    "softmax_masked": _softmax_backward,
    "slice": _slice_backward,
    "broadcast": _broadcast_backward,
    "reshape": _reshape_backward,
    "transpose": _transpose_backward,
}


@contextmanager
def inject_fault(kind: str, offset: float = 1.0):
    """Temporarily corrupt the backward rule of ``kind`` by adding ``offset``."""
    if kind not in BACKWARD_RULES:
        raise KeyError(f"unknown op kind {kind!r}")
    original = BACKWARD_RULES[kind]

    def corrupted(node, g):
        return tuple(None if r is None else r + offset for r in original(node, g))

    BACKWARD_RULES[kind] = corrupted
    try:
        yield
    finally:
        BACKWARD_RULES[kind] = original


# --------------------------------------------------------------------------
# graph traversal

def _topological_order(root: Tensor) -> List[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """
    Populate ``grad`` of every tracked leaf reachable from scalar ``loss``.

    Gradients accumulate across calls; reset with :func:`zero_grad`.
    """
    if loss.ndim != 0:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(_topological_order(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad += g
            continue
        rule = BACKWARD_RULES[t.node.kind]
        for parent, pg in zip(t.node.inputs, rule(t.node, g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


def zero_grad(params):
    for p in params:
        p.zero_grad()


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5,
               max_entries: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> float:
    """
    Largest relative disagreement between backprop and central differences.

    The error per entry is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    ``f`` is re-evaluated with each parameter entry nudged by ``±step``; it
    must read the parameters' current data on every call. ``max_entries``
    caps the number of entries probed per parameter (sampled with ``rng``).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    zero_grad(params)
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("objective is not finite")
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        gflat = ga.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = float(f().data)
            flat[i] = orig - step
            down = float(f().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("objective is not finite under perturbation")
            numeric = (up - down) / (2.0 * step)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]), abs(numeric))
            worst = max(worst, err)
    zero_grad(params)
    return worst
