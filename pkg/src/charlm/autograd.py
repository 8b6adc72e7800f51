"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array.  Every differentiable operation
records its parents and a closure that maps the output gradient to the
parent gradients; :meth:`Tensor.backward` walks the graph in reverse
topological order and accumulates gradients over fan-out.

Broadcasting follows numpy's trailing-dimension rules; gradients of a
broadcast operand are summed back to its original shape.
"""
from contextlib import contextmanager

import numpy as np

from .errors import IndexOutOfRange, NonFiniteError, NotScalar, ShapeMismatch

_grad_enabled = True
_check_finite = True


@contextmanager
def no_grad():
    """Evaluate without recording a graph (evaluation, sampling)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Rng:
    """Seeded random stream backed by numpy's PCG64.

    PCG64 output is specified bit-for-bit, so a seed reproduces the same
    stream on every platform.
    """

    algorithm = "pcg64"

    def __init__(self, seed=0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, tag):
        """Independent stream derived from this seed and an integer tag."""
        ss = np.random.SeedSequence([self.seed, int(tag)])
        out = Rng.__new__(Rng)
        out.seed = self.seed
        out._gen = np.random.Generator(np.random.PCG64(ss))
        return out

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low, high, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def get_state(self):
        return {"algorithm": self.algorithm, "seed": self.seed,
                "state": self._gen.bit_generator.state}

    def set_state(self, state):
        self.seed = int(state["seed"])
        self._gen.bit_generator.state = state["state"]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        backward(self, grad)

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    if dtype is not None:
        return Tensor(np.asarray(x, dtype=dtype))
    return Tensor(x)


def make_op(data, parents, backward_fn, op):
    """Register a custom differentiable op.

    ``backward_fn`` maps the output gradient to a tuple with one gradient
    (or None) per parent.
    """
    if _check_finite and data.dtype.kind == "f" and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite value produced by {op}")
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from exc


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    else:
        a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return a, b


# ---------------------------------------------------------------------------
# elementwise family
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_op(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_op(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_op(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _pair(a, b)

    def bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    with np.errstate(divide="ignore", invalid="ignore"):
        y = a.data / b.data
    return make_op(y, (a, b), bw, "div")


def neg(x):
    x = as_tensor(x)
    return make_op(-x.data, (x,), lambda g: (-g,), "neg")


def scale(x, c):
    """Multiply by a constant (no gradient w.r.t. the constant)."""
    x = as_tensor(x)
    c = float(c)
    return make_op(x.data * x.data.dtype.type(c), (x,), lambda g: (g * c,), "scale")


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)
    return make_op(y, (x,), lambda g: (g * y,), "exp")


def log(x):
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x.data)
    return make_op(y, (x,), lambda g: (g / x.data,), "log")


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_op(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid_np(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid_np(x.data)
    return make_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return make_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_op(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(tsum(x, axis, keepdims), 1.0 / n)


def reshape(x, shape):
    x = as_tensor(x)
    orig = x.shape
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),), "reshape")


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(x):
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def _is_basic(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis
               for p in parts)


def getitem(x, index):
    x = as_tensor(x)
    basic = _is_basic(index)

    def bw(g):
        out = np.zeros_like(x.data)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return make_op(np.array(x.data[index]), (x,), bw, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(data, tuple(tensors), bw, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_op(data, tuple(tensors), bw, "stack")


def take_last(x, index):
    """Gather along the last axis: ``out[..., i, j] = x[..., i, index[i, j]]``.

    ``index`` is an integer array broadcastable against ``x.shape[:-1]``
    plus a trailing output axis.
    """
    x = as_tensor(x)
    index = np.asarray(index)
    idx = np.broadcast_to(index, x.shape[:-1] + index.shape[-1:])

    def bw(g):
        # indices may repeat, so scatter-add
        flat_out = np.zeros((int(np.prod(x.shape[:-1])), x.shape[-1]), dtype=x.dtype)
        flat_idx = idx.reshape(-1, idx.shape[-1])
        rows = np.repeat(np.arange(flat_idx.shape[0]), flat_idx.shape[1])
        np.add.at(flat_out, (rows, flat_idx.ravel()), g.reshape(-1))
        return (flat_out.reshape(x.shape),)

    return make_op(np.take_along_axis(x.data, idx, axis=-1), (x,), bw, "take_last")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul of {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_op(data, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# normalisation and losses
# ---------------------------------------------------------------------------

def _softmax_np(z, axis, mask=None):
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis=-1, mask=None):
    """Max-shifted softmax.  ``mask`` (bool, broadcastable) marks allowed entries;
    disallowed entries get probability exactly zero."""
    x = as_tensor(x)
    y = _softmax_np(x.data, axis, mask)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_op(y, (x,), bw, "softmax")


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))
    y = x.data - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return make_op(y, (x,), bw, "log_softmax")


def cross_entropy(logits, targets):
    """Mean negative log-likelihood in nats, fused through log-sum-exp.

    ``logits`` has shape ``[..., V]``; ``targets`` holds integer ids with the
    leading shape of ``logits``.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    V = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ShapeMismatch(f"targets {targets.shape} vs logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise IndexOutOfRange(f"target id outside [0, {V})")
    z = logits.data.reshape(-1, V)
    t = targets.reshape(-1)
    n = t.shape[0]
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    logp = (z - m - np.log(s))[np.arange(n), t]
    loss = np.asarray(-logp.mean(), dtype=logits.dtype)

    def bw(g):
        p = e / s
        p[np.arange(n), t] -= 1.0
        return ((p * (g / n)).reshape(logits.shape),)

    return make_op(loss, (logits,), bw, "cross_entropy")


def embedding(ids, table):
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexOutOfRange(f"id outside [0, {table.shape[0]})")

    def bw(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (out,)

    return make_op(table.data[ids], (table,), bw, "embedding")


def layer_norm(x, gamma, beta, eps=1e-5):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeMismatch("layer_norm affine terms must match the feature axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def bw(g):
        dxhat = g * gamma.data
        dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        lead = tuple(range(x.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_op(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "layer_norm")


def dropout(x, rate, rng, training=True):
    """Inverted dropout; identity when not training or rate is zero."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return make_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------

def _topological(root):
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, grad=None):
    """Populate ``.grad`` on every tensor reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` arrays on leaves, so call
    ``zero_grad`` between steps.
    """
    if grad is None:
        if loss.data.size != 1:
            raise NotScalar(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    order = _topological(loss)
    grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    owned = set()  # buffers allocated here, safe to update in place
    for node in reversed(order):
        key = id(node)
        g = grads.pop(key, None)
        owned.discard(key)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            pkey = id(parent)
            if pkey not in grads:
                grads[pkey] = pg
            elif pkey in owned:
                grads[pkey] += pg
            else:
                grads[pkey] = grads[pkey] + pg
                owned.add(pkey)


def grad_check(f, params, epsilon=1e-6, floor=1e-4, max_coords=None, rng=None):
    """Compare backprop gradients of a scalar function with central differences.

    ``f`` takes no arguments and returns a scalar Tensor built from ``params``.
    Returns the maximum relative error ``|a - n| / max(|a|, |n|, floor)`` over
    the checked coordinates; ``floor`` turns the test into an absolute one for
    near-zero gradients.  ``max_coords`` caps the coordinates sampled per
    parameter.
    """
    for p in params:
        p.grad = None
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    rng = rng or Rng(0)
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng._gen.choice(flat.size, max_coords, replace=False))
            for i in coords:
                orig = flat[i]
                flat[i] = orig + epsilon
                fp = float(f().data)
                flat[i] = orig - epsilon
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2.0 * epsilon)
                a = float(ga.reshape(-1)[i])
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
