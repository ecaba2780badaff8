"""Dense float64 tensors with reverse-mode automatic differentiation.

A dynamic tape: each operation records its inputs and a backward rule on the
output tensor, and :func:`backward` walks the recorded graph once in reverse
topological order, accumulating gradients additively across fan-out.  Only
the ops needed by the attention models live here; shapes are 0-d, 1-d or 2-d
and everything is float64.  Subgraphs in which no input requires a gradient
are not recorded, so frozen embeddings never receive gradients.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "apply",
    "backward",
    "register_custom",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "tanh",
    "relu",
    "exp",
    "log",
    "sqrt",
    "clip_min",
    "tensor_sum",
    "tensor_mean",
    "softmax_rows",
    "layer_norm",
    "dropout",
    "embedding_lookup",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    ``requires_grad`` marks trainable leaves; interior nodes inherit the flag
    from their inputs.  ``grad`` is populated (for leaves) by backward passes
    and accumulates until :meth:`zero_grad` is called.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, bwd) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    rg = False
    for p in parents:
        if p.requires_grad:
            rg = True
            break
    out.requires_grad = rg
    if rg:
        out._parents = parents
        out._backward = bwd
    else:
        out._parents = ()
        out._backward = None
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    ``loss`` must be a scalar.  Interior gradients are kept in a scratch map
    and discarded; leaf gradients accumulate across calls.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss._backward is None:
        if loss.requires_grad and loss.grad is None:
            loss.grad = np.ones_like(loss.data)
        return

    # reverse topological order via iterative postorder DFS
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, processed = stack.pop()
        if processed:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if p._backward is not None and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        parent_grads = t._backward(g)
        for p, pg in zip(t._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64)
            if pg.shape != p.data.shape:
                raise ShapeError(
                    f"backward rule produced gradient of shape {pg.shape} "
                    f"for an input of shape {p.data.shape}"
                )
            if p._backward is None:
                p.grad = pg.copy() if p.grad is None else p.grad + pg
            else:
                pid = id(p)
                grads[pid] = pg if pid not in grads else grads[pid] + pg


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_binary(name, a, b, fwd, bwd_a, bwd_b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = fwd(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.data.shape} and {b.data.shape} do not broadcast")

    def bwd(g):
        return (
            _unbroadcast(bwd_a(g, a.data, b.data), a.data.shape),
            _unbroadcast(bwd_b(g, a.data, b.data), b.data.shape),
        )

    return _node(out, (a, b), bwd)


def add(a, b):
    return _broadcast_binary("add", a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _broadcast_binary("sub", a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _broadcast_binary("mul", a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _broadcast_binary(
        "div", a, b, lambda x, y: x / y, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y)
    )


def neg(a):
    a = _as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise ShapeError(f"matmul: operands must be at least 1-d, got {ad.shape} x {bd.shape}")
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError(
            f"matmul: shapes {ad.shape} x {bd.shape} do not conform "
            f"(inner dims {ad.shape[-1]} vs {bd.shape[0]})"
        )
    out = ad @ bd

    def bwd(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return g @ bd.T, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _node(out, (a, b), bwd)


def transpose(a):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.data.shape}")
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.data.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {old} as {shape}")
    return _node(out, (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis: int = 0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: need at least one input")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.data.shape for t in tensors]
        raise ShapeError(f"concat: shapes {shapes} do not align on axis {axis}")
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), bwd)


def slice_(a, key):
    a = _as_tensor(a)
    out = a.data[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def bwd(g):
        z = np.zeros_like(a.data)
        z[key] += g
        return (z,)

    return _node(out, (a,), bwd)


def _unary(a, fwd, dfwd):
    a = _as_tensor(a)
    out = fwd(a.data)
    return _node(out, (a,), lambda g: (g * dfwd(a.data, out),))


def tanh(a):
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def relu(a):
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0.0).astype(np.float64))


def exp(a):
    return _unary(a, np.exp, lambda x, y: y)


def log(a):
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def sqrt(a):
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def clip_min(a, floor: float):
    """max(a, floor) elementwise; gradient is zero on clipped entries."""
    return _unary(a, lambda x: np.maximum(x, floor), lambda x, y: (x > floor).astype(np.float64))


def tensor_sum(a, axis=None, keepdims: bool = False):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _node(out, (a,), bwd)


def tensor_mean(a, axis=None, keepdims: bool = False):
    a = _as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)
    count = a.data.size if axis is None else a.data.shape[axis]

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy() / count,)

    return _node(out, (a,), bwd)


def softmax_rows(a):
    """Softmax along the last axis, fused with a stable max subtraction."""
    a = _as_tensor(a)
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return ((g - dot) * s,)

    return _node(s, (a,), bwd)


def layer_norm(x, gain, bias, eps: float = 1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    xd = x.data
    if gain.data.shape != xd.shape[-1:] or bias.data.shape != xd.shape[-1:]:
        raise ShapeError(
            f"layer_norm: gain/bias shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match feature dim of {xd.shape}"
        )
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv
    out = xn * gain.data + bias.data

    def bwd(g):
        sum_axes = tuple(range(g.ndim - 1))
        dgain = (g * xn).sum(axis=sum_axes) if sum_axes else (g * xn)
        dbias = g.sum(axis=sum_axes) if sum_axes else g
        dxn = g * gain.data
        dx = inv * (
            dxn
            - dxn.mean(axis=-1, keepdims=True)
            - xn * (dxn * xn).mean(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias

    return _node(out, (x, gain, bias), bwd)


def dropout(a, p: float, rng: np.random.Generator | None = None):
    """Inverted dropout; identity when ``rng`` is None (evaluation) or p == 0."""
    a = _as_tensor(a)
    if rng is None or p <= 0.0:
        return a
    if not 0.0 < p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def embedding_lookup(table, ids):
    """Gather rows of ``table``; backward scatter-adds into the row gradient."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-d, got {table.data.shape}")
    n = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding_lookup: id out of range for table with {n} rows")
    out = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _node(out, (table,), bwd)


_OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "tanh": tanh,
    "relu": relu,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "sum": tensor_sum,
    "mean": tensor_mean,
    "concat": concat,
    "slice": slice_,
    "dropout": dropout,
    "embedding_lookup": embedding_lookup,
    "transpose": transpose,
    "reshape": reshape,
    "softmax_rows": softmax_rows,
    "layer_norm": layer_norm,
    "clip_min": clip_min,
}


def apply(op_kind: str, *inputs, **kwargs) -> Tensor:
    """Execute a named op on the tape.  Unknown names raise ValueError."""
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op kind {op_kind!r}") from None
    return fn(*inputs, **kwargs)


def register_custom(forward_fn, backward_fn, name: str | None = None):
    """Create an op with a user-supplied backward rule.

    ``forward_fn(*arrays, **kwargs) -> (output array, saved state)``;
    ``backward_fn(saved state, upstream grad) -> per-input gradient arrays``
    (a single array is accepted for single-input ops).  The returned callable
    participates in backward exactly like a built-in; a gradient of the wrong
    shape raises :class:`ShapeError` at backward time.
    """

    def op(*inputs, **kwargs):
        tensors = tuple(_as_tensor(t) for t in inputs)
        out_data, state = forward_fn(*[t.data for t in tensors], **kwargs)

        def bwd(g):
            grads = backward_fn(state, g)
            if isinstance(grads, np.ndarray):
                grads = (grads,)
            if len(grads) != len(tensors):
                raise ShapeError(
                    f"custom backward returned {len(grads)} gradients "
                    f"for {len(tensors)} inputs"
                )
            return tuple(grads)

        return _node(np.asarray(out_data, dtype=np.float64), tensors, bwd)

    if name is not None:
        _OPS[name] = op
    return op
