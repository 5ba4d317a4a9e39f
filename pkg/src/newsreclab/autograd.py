"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for the models in this package: dense layers,
embedding lookups, a gated recurrent cell, and listwise softmax losses.
Everything is float64; gradients are exact reverse-mode accumulations, so
they can be validated against central finite differences.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "parameter",
    "constant",
    "add",
    "sub",
    "mul",
    "neg",
    "div",
    "matmul",
    "affine",
    "concat_affine",
    "recurrent_affine",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "leaky_relu",
    "softplus",
    "take_rows",
    "slice_cols",
    "concat",
    "reshape",
    "reduce_sum",
    "logsumexp",
    "square_sum",
    "backward",
    "Adam",
]


class Tensor:
    """A dense array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("values", "grad", "requires_grad", "name", "_parents")

    def __init__(self, values, requires_grad=False, name=""):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()  # tuple of (parent_tensor, grad_fn)

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        else:
            self.grad.fill(0.0)

    def item(self):
        return float(self.values)

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.values.shape}, grad={self.requires_grad})"


def parameter(values, name=""):
    return Tensor(values, requires_grad=True, name=name)


def constant(values, name=""):
    return Tensor(values, requires_grad=False, name=name)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else constant(x)


def _make(values, parents):
    parents = tuple((p, fn) for p, fn in parents if p.requires_grad or p._parents)
    out = Tensor(values)
    if parents:
        out.requires_grad = True
        out._parents = parents
    return out


def _unbroadcast(grad, shape):
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.values + b.values,
        [
            (a, lambda g: _unbroadcast(g, a.values.shape)),
            (b, lambda g: _unbroadcast(g, b.values.shape)),
        ],
    )


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.values - b.values,
        [
            (a, lambda g: _unbroadcast(g, a.values.shape)),
            (b, lambda g: _unbroadcast(-g, b.values.shape)),
        ],
    )


def neg(a):
    return _make(-a.values, [(a, lambda g: -g)])


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.values * b.values,
        [
            (a, lambda g: _unbroadcast(g * b.values, a.values.shape)),
            (b, lambda g: _unbroadcast(g * a.values, b.values.shape)),
        ],
    )


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.values / b.values
    return _make(
        out,
        [
            (a, lambda g: _unbroadcast(g / b.values, a.values.shape)),
            (b, lambda g: _unbroadcast(-g * out / b.values, b.values.shape)),
        ],
    )


def matmul(a, b):
    return _make(
        a.values @ b.values,
        [
            (a, lambda g: g @ b.values.T),
            (b, lambda g: a.values.T @ g),
        ],
    )


def affine(x, w, b):
    """x @ w + b as one node (the bias broadcasts over rows)."""
    out = x.values @ w.values
    out += b.values
    return _make(
        out,
        [
            (x, lambda g: g @ w.values.T),
            (w, lambda g: x.values.T @ g),
            (b, lambda g: g.sum(axis=0)),
        ],
    )


def concat_affine(parts, w, b):
    """concat(parts, axis=1) @ w + b without materializing the concat.

    Equivalent to splitting `w` into row blocks, one per part.
    """
    sizes = [p.values.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)
    out = None
    for part, o0, o1 in zip(parts, offsets, offsets[1:]):
        piece = part.values @ w.values[o0:o1]
        if out is None:
            out = piece
        else:
            out += piece
    out += b.values

    def make_part_grad(o0, o1):
        return lambda g: g @ w.values[o0:o1].T

    def w_grad(g):
        dw = np.empty_like(w.values)
        for part, o0, o1 in zip(parts, offsets, offsets[1:]):
            dw[o0:o1] = part.values.T @ g
        return dw

    parents = [
        (part, make_part_grad(o0, o1))
        for part, o0, o1 in zip(parts, offsets, offsets[1:])
    ]
    parents.append((w, w_grad))
    parents.append((b, lambda g: g.sum(axis=0)))
    return _make(out, parents)


def recurrent_affine(x, wx, h, uh, b):
    """x @ wx + h @ uh + b as one node (the recurrent pre-activation)."""
    out = x.values @ wx.values
    out += h.values @ uh.values
    out += b.values
    return _make(
        out,
        [
            (x, lambda g: g @ wx.values.T),
            (wx, lambda g: x.values.T @ g),
            (h, lambda g: g @ uh.values.T),
            (uh, lambda g: h.values.T @ g),
            (b, lambda g: g.sum(axis=0)),
        ],
    )


def exp(a):
    out = np.exp(a.values)
    return _make(out, [(a, lambda g: g * out)])


def log(a):
    return _make(np.log(a.values), [(a, lambda g: g / a.values)])


def tanh(a):
    out = np.tanh(a.values)
    return _make(out, [(a, lambda g: g * (1.0 - out * out))])


def sigmoid(a):
    out = np.where(a.values >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.values))),
                   np.exp(-np.abs(a.values)) / (1.0 + np.exp(-np.abs(a.values))))
    return _make(out, [(a, lambda g: g * out * (1.0 - out))])


def leaky_relu(a, slope=0.01):
    # max(x, slope*x) for slope < 1; avoids materializing a mask array
    values = a.values
    out = np.maximum(values, slope * values)
    return _make(out, [(a, lambda g: np.where(values > 0, g, slope * g))])


def softplus(a):
    x = a.values
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(out, [(a, lambda g: g * sig)])


def take_rows(a, idx):
    """Select rows along the first axis; backward scatter-adds.

    Doubles as the embedding lookup when `a` is a trainable table.
    """
    idx = np.asarray(idx, dtype=np.intp)

    def grad_fn(g):
        out = np.zeros_like(a.values)
        np.add.at(out, idx, g)
        return out

    return _make(a.values[idx], [(a, grad_fn)])


def slice_cols(a, start, stop):
    """View of columns [start:stop); backward pads the rest with zeros."""

    def grad_fn(g):
        out = np.zeros_like(a.values)
        out[:, start:stop] = g
        return out

    return _make(a.values[:, start:stop], [(a, grad_fn)])


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_grad_fn(i):
        def grad_fn(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(sl)]

        return grad_fn

    return _make(
        np.concatenate([t.values for t in tensors], axis=axis),
        [(t, make_grad_fn(i)) for i, t in enumerate(tensors)],
    )


def reshape(a, shape):
    old = a.values.shape
    return _make(a.values.reshape(shape), [(a, lambda g: g.reshape(old))])


def reduce_sum(a, axis=None, keepdims=False):
    def grad_fn(g):
        if axis is None:
            return np.full_like(a.values, g)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.values.shape).copy()

    return _make(a.values.sum(axis=axis, keepdims=keepdims), [(a, grad_fn)])


def logsumexp(a, axis):
    """Numerically stable log-sum-exp; the max shift is treated as constant."""
    m = np.max(a.values, axis=axis, keepdims=True)
    shifted = exp(sub(a, constant(m)))
    return add(log(reduce_sum(shifted, axis=axis)), constant(np.squeeze(m, axis=axis)))


def square_sum(a):
    return _make(np.sum(a.values * a.values), [(a, lambda g: g * 2.0 * a.values)])


def _topo_order(root):
    order, seen, stack = [], set(), [(root, False)]
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
            stack.append((parent, False))
    return order


def backward(root):
    """Accumulate d(root)/d(tensor) into .grad for every reachable tensor."""
    if root.values.ndim != 0:
        raise ValueError("backward expects a scalar loss")
    grads = {id(root): np.ones_like(root.values)}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            # Leaf parameter: accumulate into persistent buffer.
            if node.grad is None:
                node.grad = np.zeros_like(node.values)
            node.grad += g
        for parent, grad_fn in node._parents:
            contribution = grad_fn(g)
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + contribution
            else:
                grads[pid] = contribution


class Adam:
    """Adaptive-moment estimation over a list of parameter tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.values) for p in self.params]
        self._v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        if lr == 0.0:
            return
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / correction1
            v_hat = v / correction2
            p.values -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
