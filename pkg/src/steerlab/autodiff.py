"""Minimal reverse-mode autodiff over float64 numpy arrays.

Design rules: no implicit broadcasting (elementwise ops require identical
shapes, use repeat_rows/reshape to line things up), graphs are rebuilt on
every forward pass, and a backward() from a scalar visits each node once.
"""

from __future__ import annotations

import itertools

import numpy as np

_node_counter = itertools.count()


class Tensor:
    """Node in the computation graph: a float64 array, its grad, and parent links."""

    __slots__ = ("values", "grad", "node_id", "name", "_parents", "_backward")

    def __init__(self, values, name=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self.node_id = next(_node_counter)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(()))

    def backward(self):
        """Accumulate d(self)/d(node) into .grad for every reachable node."""
        if self.values.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        tag = self.name or f"node{self.node_id}"
        return f"Tensor({tag}, shape={self.shape})"

    # small conveniences; the module-level functions are the real API
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getstate__(self):
        # graph edges are not portable; only leaf payloads survive pickling
        return {"values": self.values, "grad": self.grad, "name": self.name}

    def __setstate__(self, state):
        self.values = state["values"]
        self.grad = state["grad"]
        self.name = state["name"]
        self.node_id = next(_node_counter)
        self._parents = ()
        self._backward = None


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative DFS topological order; each node appears exactly once."""
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grads(params) -> None:
    """Reset grads of an iterable (or dict) of tensors. Idempotent."""
    if isinstance(params, dict):
        params = params.values()
    for p in params:
        p.zero_grad()


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _unary(values, parent: Tensor, grad_fn) -> Tensor:
    out = Tensor(values)
    out._parents = (parent,)

    def _backward():
        parent.grad += grad_fn(out.grad)

    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    out = Tensor(a.values + b.values)
    out._parents = (a, b)

    def _backward():
        a.grad += out.grad
        b.grad += out.grad

    out._backward = _backward
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    out = Tensor(a.values - b.values)
    out._parents = (a, b)

    def _backward():
        a.grad += out.grad
        b.grad -= out.grad

    out._backward = _backward
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    out = Tensor(a.values * b.values)
    out._parents = (a, b)

    def _backward():
        a.grad += out.grad * b.values
        b.grad += out.grad * a.values

    out._backward = _backward
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("div", a, b)
    out = Tensor(a.values / b.values)
    out._parents = (a, b)

    def _backward():
        a.grad += out.grad / b.values
        b.grad -= out.grad * a.values / (b.values * b.values)

    out._backward = _backward
    return out


def scale(a, c: float) -> Tensor:
    """Multiply by a python constant (not a graph node)."""
    a = as_tensor(a)
    c = float(c)
    return _unary(a.values * c, a, lambda g: g * c)


def shift(a, c: float) -> Tensor:
    """Add a python constant elementwise."""
    a = as_tensor(a)
    return _unary(a.values + float(c), a, lambda g: g)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} vs {b.shape}")
    out = Tensor(a.values @ b.values)
    out._parents = (a, b)

    def _backward():
        a.grad += out.grad @ b.values.T
        b.grad += a.values.T @ out.grad

    out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _unary(np.maximum(a.values, 0.0), a, lambda g: g * (a.values > 0.0))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.values)
    return _unary(t, a, lambda g: g * (1.0 - t * t))


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.values)
    return _unary(e, a, lambda g: g * e)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.values <= 0.0):
        raise ValueError("log: non-positive input")
    return _unary(np.log(a.values), a, lambda g: g / a.values)


def absolute(a) -> Tensor:
    # subgradient 0 at the kink
    a = as_tensor(a)
    return _unary(np.abs(a.values), a, lambda g: g * np.sign(a.values))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a.values * a.values, a, lambda g: g * 2.0 * a.values)


# ---------------------------------------------------------------------------
# reductions


def tsum(a) -> Tensor:
    a = as_tensor(a)
    return _unary(np.asarray(a.values.sum()), a, lambda g: np.full_like(a.values, float(g)))


def tmean(a) -> Tensor:
    a = as_tensor(a)
    n = a.values.size
    return _unary(np.asarray(a.values.mean()), a, lambda g: np.full_like(a.values, float(g) / n))


def rowsum(a: Tensor) -> Tensor:
    """Sum over columns of a 2-D tensor, result (B, 1)."""
    a = as_tensor(a)
    if a.values.ndim != 2:
        raise ValueError(f"rowsum: needs a 2-D tensor, got shape {a.shape}")
    return _unary(a.values.sum(axis=1, keepdims=True), a,
                  lambda g: np.repeat(g, a.shape[1], axis=1))


def rownorm(a: Tensor) -> Tensor:
    """Euclidean norm of each row of a 2-D tensor, result (B, 1). Subgradient 0 at zero rows."""
    a = as_tensor(a)
    if a.values.ndim != 2:
        raise ValueError(f"rownorm: needs a 2-D tensor, got shape {a.shape}")
    norms = np.sqrt((a.values * a.values).sum(axis=1, keepdims=True))

    def grad_fn(g):
        safe = np.where(norms > 0.0, norms, 1.0)
        return g * a.values / safe

    return _unary(norms, a, grad_fn)


def l2norm(a) -> Tensor:
    """Euclidean norm of the whole tensor (scalar)."""
    a = as_tensor(a)
    norm = float(np.sqrt((a.values * a.values).sum()))

    def grad_fn(g):
        if norm == 0.0:
            return np.zeros_like(a.values)
        return float(g) * a.values / norm

    return _unary(np.asarray(norm), a, grad_fn)


# ---------------------------------------------------------------------------
# softmax family (fused for numerical stability along the last axis)


def softmax(a) -> Tensor:
    a = as_tensor(a)
    v = a.values
    m = v.max(axis=-1, keepdims=True)
    e = np.exp(v - m)
    p = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return p * (g - dot)

    return _unary(p, a, grad_fn)


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    v = a.values
    m = v.max(axis=-1, keepdims=True)
    shifted = v - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True)) + m
    out_vals = v - lse
    p = np.exp(out_vals)

    def grad_fn(g):
        return g - p * g.sum(axis=-1, keepdims=True)

    return _unary(out_vals, a, grad_fn)


def logsumexp(a: Tensor) -> Tensor:
    """Row-wise log-sum-exp of a 2-D tensor, result (B, 1)."""
    a = as_tensor(a)
    if a.values.ndim != 2:
        raise ValueError(f"logsumexp: needs a 2-D tensor, got shape {a.shape}")
    m = a.values.max(axis=1, keepdims=True)
    lse = np.log(np.exp(a.values - m).sum(axis=1, keepdims=True)) + m
    soft = np.exp(a.values - lse)
    return _unary(lse, a, lambda g: g * soft)


# ---------------------------------------------------------------------------
# structural ops


def gather(a: Tensor, index) -> Tensor:
    """Pick one column per row of a 2-D tensor, result (B, 1)."""
    a = as_tensor(a)
    if a.values.ndim != 2:
        raise ValueError(f"gather: needs a 2-D tensor, got shape {a.shape}")
    idx = np.asarray(index, dtype=np.intp).reshape(-1)
    if idx.shape[0] != a.shape[0]:
        raise ValueError(f"gather: index length {idx.shape[0]} vs {a.shape[0]} rows")
    if np.any(idx < 0) or np.any(idx >= a.shape[1]):
        raise ValueError(f"gather: index out of range for {a.shape[1]} columns")
    rows = np.arange(a.shape[0])
    out = Tensor(a.values[rows, idx].reshape(-1, 1))
    out._parents = (a,)

    def _backward():
        np.add.at(a.grad, (rows, idx), out.grad[:, 0])

    out._backward = _backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    new = a.values.reshape(shape)
    return _unary(new, a, lambda g: g.reshape(a.shape))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_cols: incompatible shapes {a.shape} vs {b.shape}")
    out = Tensor(np.concatenate([a.values, b.values], axis=1))
    out._parents = (a, b)
    na = a.shape[1]

    def _backward():
        a.grad += out.grad[:, :na]
        b.grad += out.grad[:, na:]

    out._backward = _backward
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.values.ndim != 2:
        raise ValueError(f"slice_cols: needs a 2-D tensor, got shape {a.shape}")
    out = Tensor(a.values[:, start:stop].copy())
    out._parents = (a,)

    def _backward():
        a.grad[:, start:stop] += out.grad

    out._backward = _backward
    return out


def repeat_rows(a: Tensor, k: int) -> Tensor:
    """Repeat each row of a 2-D tensor k times consecutively, result (B*k, cols)."""
    a = as_tensor(a)
    if a.values.ndim != 2:
        raise ValueError(f"repeat_rows: needs a 2-D tensor, got shape {a.shape}")
    if k < 1:
        raise ValueError(f"repeat_rows: k must be >= 1, got {k}")
    out = Tensor(np.repeat(a.values, k, axis=0))
    out._parents = (a,)

    def _backward():
        a.grad += out.grad.reshape(a.shape[0], k, a.shape[1]).sum(axis=1)

    out._backward = _backward
    return out
