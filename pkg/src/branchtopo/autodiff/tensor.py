"""Reverse-mode automatic differentiation over numpy arrays.

Only the primitives BranchNet needs are provided.  Each primitive computes its
forward value eagerly and, when any input requires gradients, attaches a
closure mapping the output gradient to input gradients.

Non-differentiable points use subgradient 0 (relu / hinge at 0, norm and sqrt
at 0); max-reductions send the gradient to the first maximal index.
"""
from __future__ import annotations

import contextlib

import numpy as np

from .. import kernels
from ..errors import ShapeError

_grad_enabled = True
_kink_log: list | None = None


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def record_kinks():
    """Collect the discrete decisions (relu masks, argmax picks) made inside.

    Two evaluations whose decision logs differ straddle a kink; gradcheck
    uses this to exclude such components.
    """
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def _log_decision(arr):
    if _kink_log is not None:
        _kink_log.append(arr)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self.op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, op={self.op})"

    def __len__(self):
        return self.data.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, parents, backward, op):
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _node(ad * bd, (a, b), backward, "mul")


def div(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape),
                _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _node(ad / bd, (a, b), backward, "div")


def square(x):
    xd = x.data
    return _node(xd * xd, (x,), lambda g: (2.0 * xd * g,), "square")


def sqrt(x):
    out = np.sqrt(x.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        return (g * d,)

    return _node(out, (x,), backward, "sqrt")


def relu(x):
    mask = x.data > 0
    _log_decision(mask)
    return _node(np.maximum(x.data, 0), (x,), lambda g: (g * mask,), "relu")


def hinge(x):
    """max(0, x), the hinge used by the discriminative loss."""
    out = relu(x)
    out.op = "hinge"
    return out


# ---------------------------------------------------------------------------
# reductions and shape


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims=False):
    shape = x.shape
    axes = _norm_axis(axis, x.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(x.data.sum(axis=axes, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = sum_(x, axis, keepdims) * (1.0 / max(n, 1))
    return out


def reshape(x, shape):
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {shape}") from None
    return _node(data, (x,), lambda g: (g.reshape(old),), "reshape")


def max_axis(x, axis):
    """Max-reduction over one axis; ties go to the first maximal index."""
    axis = axis % x.ndim
    idx = np.argmax(x.data, axis=axis)
    _log_decision(idx)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _node(out, (x,), backward, "max")


def concat(tensors, axis=-1):
    like = next((t for t in tensors if isinstance(t, Tensor)), None)
    tensors = [_as_tensor(t, like) for t in tensors]
    ref = tensors[0].shape
    axis_n = axis % len(ref)
    for t in tensors:
        if t.ndim != len(ref) or any(
            s != r for k, (s, r) in enumerate(zip(t.shape, ref)) if k != axis_n
        ):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[axis_n] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis_n))

    return _node(np.concatenate([t.data for t in tensors], axis=axis_n),
                 tensors, backward, "concat")


# ---------------------------------------------------------------------------
# linear algebra / gathers


def matmul(x, w):
    """``x[..., C] @ w[C, D]`` (a shared fully connected layer)."""
    x = _as_tensor(x, w if isinstance(w, Tensor) else None)
    w = _as_tensor(w, x)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {x.shape} and {w.shape}")
    xd, wd = x.data, w.data

    def backward(g):
        gx = g @ wd.T
        gw = xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    return _node(xd @ wd, (x, w), backward, "matmul")


def gather_rows(x, idx):
    """Row gather.

    ``x`` of shape (N, C) with integer ``idx`` of any shape gives
    ``idx.shape + (C,)``.  ``x`` of shape (B, N, C) with ``idx`` of shape
    (B, ...) gathers per batch item.
    """
    idx = np.asarray(idx, dtype=np.int64)
    xd = x.data
    if xd.ndim == 2:
        n, c = xd.shape
        flat = idx.reshape(-1)
    elif xd.ndim == 3:
        b, n, c = xd.shape
        if idx.shape[0] != b:
            raise ShapeError(f"gather-rows: batch mismatch {xd.shape} vs index {idx.shape}")
        flat = (idx.reshape(b, -1) + (np.arange(b) * n)[:, None]).reshape(-1)
    else:
        raise ShapeError(f"gather-rows: expected 2-D or 3-D input, got {xd.shape}")
    if flat.size and (flat.min() < 0 or flat.max() >= xd.size // c):
        raise ShapeError(f"gather-rows: index out of range for shape {xd.shape}")
    rows = xd.reshape(-1, c)
    out = rows[flat].reshape(idx.shape + (c,))
    shape = xd.shape

    def backward(g):
        acc = np.zeros((rows.shape[0], c), dtype=g.dtype)
        kernels.scatter_add_rows(acc, np.ascontiguousarray(flat),
                                 np.ascontiguousarray(g.reshape(-1, c)))
        return (acc.reshape(shape),)

    return _node(out, (x,), backward, "gather-rows")


def segment_mean(x, seg, n_seg):
    """Per-segment mean of rows of ``x`` (N, D); rows with ``seg < 0`` are ignored."""
    seg = np.asarray(seg, dtype=np.int64)
    if x.ndim != 2 or seg.shape != (x.shape[0],):
        raise ShapeError(f"masked-mean: shapes {x.shape} and {seg.shape}")
    valid = seg >= 0
    counts = np.bincount(seg[valid], minlength=n_seg).astype(x.dtype)
    sums = np.zeros((n_seg, x.shape[1]), dtype=x.dtype)
    rows = np.ascontiguousarray(np.flatnonzero(valid))
    kernels.scatter_add_rows(sums, np.ascontiguousarray(seg[valid]),
                             np.ascontiguousarray(x.data[rows]))
    safe = np.maximum(counts, 1)[:, None]
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[rows] = (g / safe)[seg[valid]]
        return (gx,)

    return _node(sums / safe, (x,), backward, "masked-mean")


def norm(x, axis=-1):
    """Euclidean norm over ``axis``; subgradient 0 at the origin."""
    out = np.sqrt((x.data * x.data).sum(axis=axis))
    xd = x.data

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(out > 0, g / out, 0.0)
        return (np.expand_dims(scale, axis) * xd,)

    return _node(out, (x,), backward, "norm")


# ---------------------------------------------------------------------------
# softmax family


def softmax(x):
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (x,), backward, "softmax")


def log_softmax(x):
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _node(out, (x,), backward, "log-softmax")


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm(x, gamma, beta, running_mean, running_var, train, momentum=0.9, eps=1e-5,
              update_stats=True, unbiased=True):
    """Per-feature normalization over all leading (batch x point) axes.

    ``running_mean`` / ``running_var`` are numpy arrays updated in place in
    train mode: ``running = momentum * running + (1 - momentum) * batch``.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: features {c} vs scale {gamma.shape} / shift {beta.shape}")
    xd = np.ascontiguousarray(x.data.reshape(-1, c))
    n = xd.shape[0]
    gd = np.ascontiguousarray(gamma.data, dtype=xd.dtype)
    bd = np.ascontiguousarray(beta.data, dtype=xd.dtype)
    if train:
        out, xhat, mu, var, inv = kernels.bn_forward_train(xd, gd, bd, eps)
        if update_stats:
            batch_var = var * (n / (n - 1)) if unbiased and n > 1 else var
            running_mean *= momentum
            running_mean += ((1.0 - momentum) * mu).astype(running_mean.dtype)
            running_var *= momentum
            running_var += ((1.0 - momentum) * batch_var).astype(running_var.dtype)
    else:
        inv = 1.0 / np.sqrt(running_var.astype(np.float64) + eps)
        xhat = ((xd - running_mean) * inv).astype(xd.dtype)
        out = (xhat * gd + bd).astype(xd.dtype)
    out = out.reshape(x.shape)
    shape = x.shape

    def backward(g):
        g2 = np.ascontiguousarray(g.reshape(-1, c), dtype=xd.dtype)
        dx, dgamma, dbeta = kernels.bn_backward(g2, xhat, gd, inv, train)
        return dx.reshape(shape), dgamma, dbeta

    return _node(out, (x, gamma, beta), backward, "batchnorm")


# ---------------------------------------------------------------------------
# reverse pass


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


def backward(loss, params=None):
    """Reverse-mode pass from a scalar ``loss``.

    Returns gradients of the leaf tensors.  With ``params`` (a dict of name ->
    Tensor, or an iterable of Tensors) the result is keyed like ``params`` and
    parameters the loss does not depend on get an all-zero gradient.
    Gradients are also stored on each leaf's ``.grad``.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must have one element, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            leaves[id(node)] = (node, g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node, g in leaves.values():
        node.grad = g
    if params is None:
        return {node: g for node, g in leaves.values()}
    items = params.items() if isinstance(params, dict) else ((p, p) for p in params)
    out = {}
    for key, p in items:
        hit = leaves.get(id(p))
        out[key] = hit[1] if hit is not None else np.zeros_like(p.data)
    return out
