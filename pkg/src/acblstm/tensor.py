"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation that touches a tensor with ``requires_grad`` records its
inputs and a backward rule on the output. ``backward`` walks the recorded
graph in reverse topological order and accumulates gradients into the leaf
tensors. Intermediate gradients live only for the duration of the call.

Broadcasting is deliberately absent: binary ops need equal shapes, or one
side must be a Python number / 0-d tensor. Use :func:`broadcast_to` when an
expansion is really wanted.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import BoundsError, ContractError, LabelError, NumericError, ShapeError

Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op=""):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 0 and min(arr.shape) < 1:
            raise ShapeError(f"all dimensions must be >= 1, got {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op or 'leaf'!r})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        backward(self)

    # operator sugar; all routes go through the module-level ops
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    @property
    def T(self):
        return transpose2d(self)


def _result(data, parents, backward_fn, op) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = needs
    out._parents = tuple(parents) if needs else ()
    out._backward = backward_fn if needs else None
    out._op = op
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ----------------------------------------------------------------------------
# creation


def tensor_create(shape, init="zeros", *, value=0.0, low=None, high=None, seed=None,
                  data=None, requires_grad=False) -> Tensor:
    """Create a tensor of ``shape`` using one of four initialisers.

    ``init`` is ``"zeros"``, ``"constant"`` (uses ``value``), ``"uniform"``
    (needs ``low < high`` and a ``seed``) or ``"data"`` (explicit values whose
    count must equal the product of ``shape``).
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"invalid shape {shape}")
    if init == "zeros":
        arr = np.zeros(shape)
    elif init == "constant":
        arr = np.full(shape, float(value))
    elif init == "uniform":
        if low is None or high is None or not low < high:
            raise ContractError("uniform init needs low < high")
        if seed is None:
            raise ContractError("uniform init needs a seed")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        arr = rng.uniform(low, high, size=shape)
    elif init == "data":
        flat = np.asarray(data, dtype=np.float64).reshape(-1)
        if flat.size != int(np.prod(shape)):
            raise ShapeError(f"{flat.size} values cannot fill shape {shape}")
        arr = flat.reshape(shape).copy()
    else:
        raise ContractError(f"unknown init {init!r}")
    return Tensor(arr, requires_grad=requires_grad)


def zeros(shape, requires_grad=False) -> Tensor:
    return tensor_create(shape, "zeros", requires_grad=requires_grad)


def full(shape, value, requires_grad=False) -> Tensor:
    return tensor_create(shape, "constant", value=value, requires_grad=requires_grad)


def uniform(shape, low, high, seed, requires_grad=False) -> Tensor:
    return tensor_create(shape, "uniform", low=low, high=high, seed=seed,
                         requires_grad=requires_grad)


# ----------------------------------------------------------------------------
# elementwise


def _binary_operands(a, b, op):
    a_is_t, b_is_t = isinstance(a, Tensor), isinstance(b, Tensor)
    a = a if a_is_t else Tensor(a)
    b = b if b_is_t else Tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
    return a, b


def _unbroadcast(g, shape):
    # only the scalar-with-tensor case ever reaches here
    return np.asarray(g.sum()) if shape == () and g.shape != () else g


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw, "mul")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _result(np.where(mask, a.data, 0.0), (a,), bw, "relu")


def _sigmoid(x):
    # two-branch form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def bw(g):
        return (g * s * (1.0 - s),)

    return _result(s, (a,), bw, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - t * t),)

    return _result(t, (a,), bw, "tanh")


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def bw(g):
        return (g * e,)

    return _result(e, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    def bw(g):
        return (g / a.data,)

    return _result(np.log(a.data), (a,), bw, "log")


_ELEMENTWISE = {"add": add, "mul": mul, "relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name; binary ops take ``b``, unary ops must not."""
    fn = _ELEMENTWISE.get(op)
    if fn is None:
        raise ContractError(f"unknown elementwise op {op!r}")
    if op in ("add", "mul"):
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return fn(a, b)
    if b is not None:
        raise ContractError(f"{op} is unary")
    return fn(a)


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def transpose2d(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose2d needs a 2-D tensor, got {a.shape}")

    def bw(g):
        return (g.T,)

    return _result(a.data.T.copy(), (a,), bw, "transpose2d")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` applied over the last axis of ``x``.

    Leading axes of ``x`` are treated as a batch; ``weight`` is ``out x in``.
    """
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} vs weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (weight.shape[0],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ weight.data).reshape(x.shape)
        gw = g2.T @ x2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _result(out, parents, bw, "linear")


# ----------------------------------------------------------------------------
# structural


def _check_axis(axis, ndim):
    if not -ndim <= axis < ndim:
        raise BoundsError(f"axis {axis} out of range for {ndim}-D tensor")
    return axis % ndim


def concat(tensors: Sequence[Tensor], axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of nothing")
    ndim = tensors[0].ndim
    axis = _check_axis(axis, ndim)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise ShapeError(f"concat: ragged shapes {ref} and {t.shape} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        idx = [slice(None)] * ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw,
                   "concat")


def stack(tensors: Sequence[Tensor], axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise ShapeError("stack: all inputs must share a shape")
    axis = _check_axis(axis, len(shape) + 1)

    def bw(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


def slice_(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Half-open range ``[start, stop)`` along ``axis``."""
    axis = _check_axis(axis, a.ndim)
    n = a.shape[axis]
    if not 0 <= start < stop <= n:
        raise BoundsError(f"slice [{start}, {stop}) outside axis of length {n}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        full_ = np.zeros(a.shape)
        full_[idx] = g
        return (full_,)

    return _result(a.data[idx].copy(), (a,), bw, "slice")


def select(a: Tensor, axis: int, index: int) -> Tensor:
    """Pick one position along ``axis`` and drop that axis."""
    axis = _check_axis(axis, a.ndim)
    if not 0 <= index < a.shape[axis]:
        raise BoundsError(f"index {index} outside axis of length {a.shape[axis]}")
    idx = [slice(None)] * a.ndim
    idx[axis] = index
    idx = tuple(idx)

    def bw(g):
        full_ = np.zeros(a.shape)
        full_[idx] = g
        return (full_,)

    return _result(a.data[idx].copy(), (a,), bw, "select")


def flip(a: Tensor, axis: int) -> Tensor:
    axis = _check_axis(axis, a.ndim)

    def bw(g):
        return (np.flip(g, axis=axis),)

    return _result(np.flip(a.data, axis=axis).copy(), (a,), bw, "flip")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc

    def bw(g):
        return (g.reshape(a.shape),)

    return _result(out, (a,), bw, "reshape")


def sum_(a: Tensor, axis=None) -> Tensor:
    if axis is not None:
        axis = _check_axis(axis, a.ndim)

    def bw(g):
        if axis is None:
            return (np.full(a.shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _result(np.asarray(a.data.sum(axis=axis)), (a,), bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.size if axis is None else a.shape[_check_axis(axis, a.ndim)]
    return mul(sum_(a, axis), 1.0 / count)


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit numpy-style expansion; backward sums over the expanded axes."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from exc
    lead = len(shape) - a.ndim
    kept = tuple(i + lead for i, s in enumerate(a.shape) if s == 1 and shape[i + lead] != 1)

    def bw(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        if kept:
            g = g.sum(axis=tuple(k - lead for k in kept), keepdims=True)
        return (g,)

    return _result(out, (a,), bw, "broadcast")


_STRUCTURAL = {"concat", "slice", "reshape", "sum", "mean", "transpose2d"}


def structural(op: str, *inputs, **kwargs) -> Tensor:
    if op == "concat":
        return concat(inputs[0] if len(inputs) == 1 else inputs, **kwargs)
    if op == "slice":
        return slice_(*inputs, **kwargs)
    if op == "reshape":
        return reshape(*inputs, **kwargs)
    if op == "sum":
        return sum_(*inputs, **kwargs)
    if op == "mean":
        return mean(*inputs, **kwargs)
    if op == "transpose2d":
        return transpose2d(*inputs)
    raise ContractError(f"unknown structural op {op!r}; expected one of {sorted(_STRUCTURAL)}")


# ----------------------------------------------------------------------------
# reductions used by the losses


def logsumexp(a: Tensor, axis=-1) -> Tensor:
    axis = _check_axis(axis, a.ndim)
    mx = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - mx)
    total = shifted.sum(axis=axis, keepdims=True)
    out = (np.log(total) + mx).squeeze(axis)
    soft = shifted / total

    def bw(g):
        return (np.expand_dims(g, axis) * soft,)

    return _result(out, (a,), bw, "logsumexp")


def softmax(x: np.ndarray, axis=-1) -> np.ndarray:
    """Plain numpy softmax, for inference paths that need no gradient."""
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be batch x classes, got {logits.shape}")
    m, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != m:
        raise ShapeError(f"{labels.size} labels for a batch of {m}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelError(f"labels must lie in [0, {c})")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("non-finite logits")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    rows = np.arange(m)
    loss = -log_probs[rows, labels].mean()

    def bw(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (float(g) / m),)

    return _result(np.asarray(loss), (logits,), bw, "softmax_xent")


# ----------------------------------------------------------------------------
# autodiff driver


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Gradients add onto whatever ``grad`` already holds; clear them with
    :func:`zero_grads` between steps.
    """
    if loss.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topological(loss)):
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
                grads[key] = np.asarray(pg, dtype=np.float64).reshape(parent.shape)


def zero_grads(params: Iterable[Tensor]):
    for p in params:
        p.grad = None


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative disagreement between autodiff and central differences.

    ``f`` must map ``x`` to a scalar deterministically; the relative error per
    coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    was = x.requires_grad
    x.requires_grad = True
    saved_grad = x.grad
    x.grad = None
    try:
        first = f(x)
        if first.size != 1:
            raise ContractError("f must return a scalar")
        if float(f(x).data) != float(first.data):
            raise ContractError("f is not deterministic (stochastic layer still active?)")
        backward(first)
        analytic = np.zeros(x.shape) if x.grad is None else x.grad.copy()
        numeric = np.zeros(x.shape)
        flat = x.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f(x).data)
            flat[i] = orig - eps
            down = float(f(x).data)
            flat[i] = orig
            num_flat[i] = (up - down) / (2 * eps)
    finally:
        x.requires_grad = was
        x.grad = saved_grad
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
