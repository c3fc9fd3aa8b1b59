"""Dense float64 tensors with reverse-mode differentiation.

Each op records its parents and a closure mapping the output gradient to
parent gradients. ``backward`` walks the graph in reverse topological order.
Only the ops the morphing pipeline needs are provided.
"""

from __future__ import annotations

import numpy as np


class GraphConsumedError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_op", "_consumed")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None, _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._vjp = _vjp
        self._op = _op
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _size_error(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        backward(self)


def _size_error(t):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, vjp, op):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, parents if req else (), vjp if req else None, op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast("div", a, b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
                 "div")


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _make(np.where(pos, x.data, slope * x.data), (x,),
                 lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


# --------------------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"transpose: expected a matrix, got shape {x.shape}")
    return _make(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def rotate_rows(x, rotations) -> Tensor:
    """``out[k] = rotations[k] @ x[k]`` with constant ``rotations`` of shape (m, 3, 3)."""
    x = as_tensor(x)
    R = np.asarray(rotations, dtype=np.float64)
    if R.shape != (x.shape[0], x.shape[1], x.shape[1]):
        raise ValueError(f"rotate_rows: incompatible shapes {x.shape} and {R.shape}")
    return _make(np.einsum("kij,kj->ki", R, x.data), (x,),
                 lambda g: (np.einsum("kij,ki->kj", R, g),), "rotate_rows")


def concat_cols(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.ndim != 2 for p in parts):
        raise ValueError(f"concat_cols: incompatible shapes {[p.shape for p in parts]}")
    splits = np.cumsum([p.shape[1] for p in parts])[:-1]
    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts),
                 lambda g: tuple(np.split(g, splits, axis=1)), "concat_cols")


# --------------------------------------------------------------------------- row-wise


def softmax_rows(x, scale: float = 1.0) -> Tensor:
    """Row softmax of ``scale * x`` with the row max subtracted first."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"softmax_rows: expected a matrix, got shape {x.shape}")
    z = scale * x.data
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (scale * y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _make(y, (x,), vjp, "softmax_rows")


def l2_normalize_rows(x) -> Tensor:
    """Unit-norm rows; an all-zero row stays zero (and passes zero gradient)."""
    x = as_tensor(x)
    norm = np.linalg.norm(x.data, axis=1, keepdims=True)
    nz = norm > 0
    safe = np.where(nz, norm, 1.0)
    y = np.where(nz, x.data / safe, 0.0)

    def vjp(g):
        return (np.where(nz, (g - y * (g * y).sum(axis=1, keepdims=True)) / safe, 0.0),)

    return _make(y, (x,), vjp, "l2_normalize_rows")


def gather_rows(x, index) -> Tensor:
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def vjp(g):
        # segment-sum in index order keeps the reduction deterministic
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, index, g)
        return (out,)

    return _make(x.data[index], (x,), vjp, "gather_rows")


def gather_cols(x, index) -> Tensor:
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    m = x.shape[1]

    def vjp(g):
        out = np.zeros((g.shape[0], m))
        np.add.at(out.T, index, g.T)
        return (out,)

    return _make(x.data[:, index], (x,), vjp, "gather_cols")


def scatter_mean_rows(x, index, n_out: int) -> Tensor:
    """``out[k]`` is the mean of rows ``x[r]`` with ``index[r] == k`` (zero if none)."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if len(index) != x.shape[0]:
        raise ValueError(f"scatter_mean_rows: index length {len(index)} vs rows {x.shape[0]}")
    counts = np.bincount(index, minlength=n_out).astype(np.float64)
    inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    out = np.zeros((n_out,) + x.shape[1:])
    np.add.at(out, index, x.data)
    out *= inv.reshape((-1,) + (1,) * (x.ndim - 1))
    w = inv[index].reshape((-1,) + (1,) * (x.ndim - 1))
    return _make(out, (x,), lambda g: (g[index] * w,), "scatter_mean_rows")


# --------------------------------------------------------------------------- reductions


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def frobenius_sq(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.sum(x.data * x.data), (x,), lambda g: (2.0 * g * x.data,), "frobenius_sq")


# --------------------------------------------------------------------------- backward


def _topo(root):
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
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphConsumedError("backward already called on this graph; recompute the forward pass")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tracked tensor")
    loss._consumed = True
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._vjp(g)):
            if not p.requires_grad or pg is None:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
