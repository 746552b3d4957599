"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every op builds a :class:`Node` holding its forward value and a closure that
maps the node's adjoint to the adjoints of its inputs. :func:`backward` walks
the graph in reverse topological order, visiting each node once, and
accumulates into the ``grad`` of trainable :class:`Parameter` leaves.

Broadcasting follows numpy for the elementwise ops; adjoints are summed back
down to each input's shape.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from meshfield.errors import NonFinite, NonScalarRoot, ShapeMismatch

check_finite = True


class Node:
    __slots__ = ("value", "parents", "grad_fn", "op")

    def __init__(self, value, parents=(), grad_fn=None, op="const"):
        self.value = value
        self.parents = parents
        self.grad_fn = grad_fn
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class Parameter(Node):
    """A trainable leaf. ``grad`` always has the shape of ``value``."""

    __slots__ = ("name", "trainable", "grad")

    def __init__(self, value, name="", trainable=True):
        value = np.array(value, dtype=np.float64 if np.asarray(value).dtype.kind != "f" else None)
        if value.ndim > 2:
            raise ShapeMismatch(f"parameter {name!r} has rank {value.ndim} > 2")
        super().__init__(value, (), None, "param")
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=np.float64) if not isinstance(x, np.ndarray) else x)


def _make(value, parents, grad_fn, op):
    if check_finite and not np.all(np.isfinite(value)):
        raise NonFinite(op)
    return Node(value, parents, grad_fn, op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a.value, b.value, "add")
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a.value, b.value, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a.value, b.value, "mul")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)), "mul")


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a.value, b.value, "div")
    av, bv = a.value, b.value
    out = av / bv

    def grad_fn(g):
        ga = g / bv
        return _unbroadcast(ga, av.shape), _unbroadcast(-ga * out, bv.shape)

    return _make(out, (a, b), grad_fn, "div")


def sin(x, alpha: float = 1.0) -> Node:
    """sin(alpha * x)."""
    x = as_node(x)
    z = alpha * x.value
    c = np.cos(z)
    return _make(np.sin(z), (x,), lambda g: (alpha * g * c,), "sin")


def relu(x) -> Node:
    x = as_node(x)
    mask = x.value > 0
    return _make(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def tanh(x) -> Node:
    x = as_node(x)
    y = np.tanh(x.value)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def softplus_np(x):
    return np.logaddexp(0.0, x)


def sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def exp_scale(c, lam, t_hat) -> Node:
    """c * exp(-lam[:, None] * softplus(t_hat)[None, :]).

    ``c`` is (k, C) spectral coefficients, ``lam`` (k,) eigenvalues (constant)
    and ``t_hat`` (C,) raw diffusion times.
    """
    c, t_hat = as_node(c), as_node(t_hat)
    lam = np.asarray(lam)
    if c.value.ndim != 2 or c.shape[0] != lam.shape[0] or t_hat.value.shape != (c.shape[1],):
        raise ShapeMismatch(f"exp_scale: c {c.shape}, lam {lam.shape}, t {t_hat.shape}")
    t = softplus_np(t_hat.value)
    E = np.exp(-lam[:, None] * t[None, :])
    out = c.value * E
    dt = sigmoid_np(t_hat.value)

    def grad_fn(g):
        gc = g * E
        gt = -(g * out * lam[:, None]).sum(0) * dt
        return gc, gt

    return _make(out, (c, t_hat), grad_fn, "exp_scale")


# -- linear algebra and structure ------------------------------------------------


def matmul(a, b) -> Node:
    """Dense product; either operand may also be a constant scipy sparse matrix."""
    if sp.issparse(a):
        S = a.tocsr()
        b = as_node(b)
        if S.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"matmul: {S.shape} @ {b.shape}")
        St = S.T.tocsr()
        return _make(np.asarray(S @ b.value), (b,), lambda g: (np.asarray(St @ g),), "spmatmul")
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def grad_fn(g):
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), grad_fn, "matmul")


def transpose(x) -> Node:
    x = as_node(x)
    return _make(x.value.T, (x,), lambda g: (g.T,), "transpose")


def concat(nodes, axis: int = 1) -> Node:
    nodes = [as_node(n) for n in nodes]
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    splits = np.cumsum([n.shape[axis] for n in nodes])[:-1]
    return _make(out, tuple(nodes), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def zeros_like(x) -> Node:
    return Node(np.zeros_like(as_node(x).value))


# -- reductions ------------------------------------------------------------------


def sum(x, axis=None) -> Node:  # noqa: A001
    x = as_node(x)
    shape = x.shape

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(x.value.sum(axis=axis)), (x,), grad_fn, "sum")


def mean(x, axis=None) -> Node:
    x = as_node(x)
    count = x.value.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / count)


def dot(a, b, axis: int = -1) -> Node:
    """Row-wise inner product along ``axis``."""
    a, b = as_node(a), as_node(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"dot: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value

    def grad_fn(g):
        g = np.expand_dims(g, axis)
        return g * bv, g * av

    return _make((av * bv).sum(axis=axis), (a, b), grad_fn, "dot")


def l2_norm(x, axis: int = -1) -> Node:
    """Euclidean norm along ``axis``; the adjoint at a zero vector is taken as 0."""
    x = as_node(x)
    nrm = np.sqrt((x.value**2).sum(axis=axis))

    def grad_fn(g):
        safe = np.where(nrm > 0, nrm, 1.0)
        return (np.expand_dims(np.where(nrm > 0, g / safe, 0.0), axis) * x.value,)

    return _make(nrm, (x,), grad_fn, "l2_norm")


# -- backward ----------------------------------------------------------------------


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(param) into ``param.grad`` for every trainable leaf."""
    if root.value.size != 1:
        raise NonScalarRoot(f"backward needs a scalar root, got shape {root.value.shape}")
    adj = {id(root): np.ones_like(root.value)}
    for node in reversed(_topo_order(root)):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            if node.trainable:
                node.grad += g
            continue
        if node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None or (parent.grad_fn is None and not isinstance(parent, Parameter)):
                continue
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + pg
            else:
                adj[key] = pg
