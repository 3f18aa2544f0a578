"""Minimal reverse-mode autodiff on a dynamic Wengert tape.

Graphs are built define-by-run: every differentiable op appends one node to
the active tape, so the recording order is already a topological order and
the backward pass is a single reverse sweep.  Everything is float64.
"""

from __future__ import annotations

import itertools
import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeMismatchError",
    "backward",
    "forward_op",
    "add",
    "multiply",
    "matmul",
    "relu",
    "tanh",
    "sigmoid",
    "softmax",
    "log",
    "exp",
    "maximum",
    "concat",
    "mean",
    "cross_entropy_with_logits",
    "scale",
    "pick",
    "straight_through",
    "as_tensor",
]


class ShapeMismatchError(ValueError):
    """Raised when an op receives incompatible input shapes."""

    def __init__(self, kind, shapes):
        self.kind = kind
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{kind}: incompatible shapes {self.shapes}")


# Node indices are global so nodes from nested tapes still sort in
# recording order during the backward sweep.
_NODE_IDS = itertools.count()
_TLS = threading.local()


class TapeNode:
    __slots__ = ("idx", "inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.idx = next(_NODE_IDS)
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Append-only record of differentiable ops.

    Use as a context manager to scope recording; trainer code opens a fresh
    tape per loss so old graphs can be garbage collected.  A tape must stay
    on the thread that created it.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False


def _tape_stack():
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    if not stack:
        # ambient tape so bare usage works outside a `with Tape()` block
        stack.append(Tape())
    return stack[-1]


class Tensor:
    """Dense float64 array plus autodiff bookkeeping.

    `node` is the handle of the tape node that produced this tensor (None
    for leaves and constants).  `grad` is populated by `backward`.
    """

    __slots__ = ("data", "requires_grad", "node", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.node = None
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data, inputs, backward_fn):
    out = Tensor(out_data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = TapeNode(tuple(inputs), out, backward_fn)
        out.node = node
        _active_tape().nodes.append(node)
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatchError("add", (a.shape, b.shape)) from None

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), back)


def multiply(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeMismatchError("multiply", (a.shape, b.shape)) from None

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), back)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2 and ad.shape[1] == bd.shape[0]:

        def back(g):
            return g @ bd.T, ad.T @ g

    elif ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0]:

        def back(g):
            return g[:, None] * bd[None, :], ad.T @ g

    elif ad.ndim == 1 and bd.ndim == 2 and ad.shape[0] == bd.shape[0]:

        def back(g):
            return bd @ g, np.outer(ad, g)

    else:
        raise ShapeMismatchError("matmul", (a.shape, b.shape))
    return _record(ad @ bd, (a, b), back)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0.0

    def back(g):
        return (g * mask,)

    return _record(np.where(mask, x.data, 0.0), (x,), back)


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)

    def back(g):
        return (g * (1.0 - out * out),)

    return _record(out, (x,), back)


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)

    def back(g):
        return (g * out * (1.0 - out),)

    return _record(out, (x,), back)


def softmax(x):
    """Shifted softmax over the last axis; preserves the argmax exactly."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _record(out, (x,), back)


def log(x):
    x = as_tensor(x)
    with np.errstate(divide="ignore"):
        out = np.log(x.data)

    def back(g):
        # zero upstream grad stays zero even where x == 0 (log -> -inf)
        res = np.zeros_like(x.data)
        np.divide(g, x.data, out=res, where=g != 0.0)
        return (res,)

    return _record(out, (x,), back)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def back(g):
        return (g * out,)

    return _record(out, (x,), back)


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = np.maximum(a.data, b.data)
    except ValueError:
        raise ShapeMismatchError("elementwise-max", (a.shape, b.shape)) from None
    take_a = a.data >= b.data

    def back(g):
        return (
            _unbroadcast(np.where(take_a, g, 0.0), a.shape),
            _unbroadcast(np.where(take_a, 0.0, g), b.shape),
        )

    return _record(out, (a, b), back)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    shapes = [t.shape for t in tensors]
    if not tensors:
        raise ValueError("concat: empty input list")
    base = list(shapes[0])
    for s in shapes[1:]:
        trimmed = list(s)
        if len(trimmed) != len(base):
            raise ShapeMismatchError("concat", shapes)
        trimmed[axis] = base[axis]
        if trimmed != base:
            raise ShapeMismatchError("concat", shapes)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(out, tuple(tensors), back)


def mean(x):
    x = as_tensor(x)
    n = x.data.size

    def back(g):
        return (np.full(x.shape, float(g) / n),)

    return _record(np.asarray(x.data.mean()), (x,), back)


def cross_entropy_with_logits(logits, labels):
    """Mean cross-entropy of integer `labels` under row `logits`.

    Fused log-sum-exp keeps the forward and backward stable for large
    logits; `labels` is a plain integer array, not a differentiable input.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeMismatchError(
            "cross-entropy-with-logits", (logits.shape, labels.shape)
        )
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    lse = np.log(ez.sum(axis=1)) + zmax[:, 0]
    n = labels.shape[0]
    rows = np.arange(n)
    nll = (lse - z[rows, labels]).mean()
    probs = ez / ez.sum(axis=1, keepdims=True)

    def back(g):
        gz = probs.copy()
        gz[rows, labels] -= 1.0
        return (gz * (float(g) / n),)

    return _record(np.asarray(nll), (logits,), back)


def scale(x, factor):
    """Multiply by a plain (non-differentiable) scalar."""
    x = as_tensor(x)
    factor = float(factor)

    def back(g):
        return (g * factor,)

    return _record(x.data * factor, (x,), back)


def pick(x, k):
    """Select entry `k` of a vector as a scalar tensor."""
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeMismatchError("pick", (x.shape,))
    k = int(k)

    def back(g):
        res = np.zeros_like(x.data)
        res[k] = g
        return (res,)

    return _record(np.asarray(x.data[k]), (x,), back)


def straight_through(soft, hard_values):
    """Forward `hard_values` exactly, backward the identity onto `soft`.

    The discrete sample is used in the forward pass while gradients flow
    through the continuous relaxation untouched.
    """
    soft = as_tensor(soft)
    hard_values = np.asarray(hard_values, dtype=np.float64)
    if hard_values.shape != soft.shape:
        raise ShapeMismatchError("straight-through", (soft.shape, hard_values.shape))

    def back(g):
        return (g,)

    return _record(hard_values.copy(), (soft,), back)


# ---------------------------------------------------------------------------
# kind-string dispatch and the backward sweep

_OP_KINDS = {
    "add": add,
    "multiply": multiply,
    "matmul": matmul,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "log": log,
    "exp": exp,
    "elementwise-max": maximum,
    "concat": lambda *ts, axis=0: concat(list(ts), axis=axis),
    "mean": mean,
    "cross-entropy-with-logits": cross_entropy_with_logits,
    "scalar-scale": lambda x, factor: scale(x, factor),
}


def forward_op(kind, inputs, **kwargs):
    """Apply the op named `kind` to `inputs` (a list of tensors).

    Extra op parameters (`labels` for cross-entropy, `factor` for
    scalar-scale) go in `kwargs`.
    """
    if kind not in _OP_KINDS:
        raise ValueError(f"unknown op kind {kind!r}")
    return _OP_KINDS[kind](*inputs, **kwargs)


def backward(loss):
    """Reverse sweep from a scalar `loss`; returns {tensor: gradient}.

    The map covers every requires_grad tensor reachable from the loss, and
    each such tensor also gets the gradient stored on `.grad`.
    """
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        got = loss.shape if isinstance(loss, Tensor) else type(loss)
        raise ValueError(f"backward expects a scalar tensor, got {got}")
    if loss.node is None and not loss.requires_grad:
        raise ValueError("loss is not on the tape (nothing requires grad)")

    # Collect the subgraph below the loss; sorting by recording index
    # recovers a topological order.
    nodes = []
    seen = set()
    stack = [loss.node] if loss.node is not None else []
    while stack:
        node = stack.pop()
        if node.idx in seen:
            continue
        seen.add(node.idx)
        nodes.append(node)
        for t in node.inputs:
            if t.node is not None and t.node.idx not in seen:
                stack.append(t.node)
    nodes.sort(key=lambda n: n.idx, reverse=True)

    grads = {id(loss): np.ones((), dtype=np.float64)}
    tensors = {id(loss): loss}
    for node in nodes:
        g = grads.get(id(node.output))
        if g is None:
            continue
        for t, gin in zip(node.inputs, node.backward_fn(g)):
            if not t.requires_grad or gin is None:
                continue
            gin = np.asarray(gin, dtype=np.float64).reshape(t.data.shape)
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gin
            else:
                grads[key] = gin
                tensors[key] = t

    result = {}
    for key, g in grads.items():
        t = tensors[key]
        t.grad = g
        result[t] = g
    return result
