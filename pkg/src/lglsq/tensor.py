"""A small reverse-mode autodiff engine over numpy arrays.

Only the operations needed by the desk-scale networks are provided. Every
op builds a :class:`GraphNode` when at least one input requires a gradient;
:func:`backward` walks the graph once in reverse topological order.
:func:`custom_grad` lets a caller supply both the forward value and the
backward rule, which is how the rounding estimators override autodiff.
"""

from contextlib import contextmanager

import numpy as np

from .errors import ContractError, ShapeError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class GraphNode:
    __slots__ = ("inputs", "backward_rule", "ctx", "name")

    def __init__(self, inputs, backward_rule, ctx=None, name=""):
        self.inputs = inputs
        self.backward_rule = backward_rule
        self.ctx = ctx
        self.name = name


class Tensor:
    """n-d float array with an optional gradient and graph link.

    Data is stored as a numpy array; float32 unless ``dtype`` says otherwise
    (float64 is used by gradient-check tests).
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None, name=""):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None
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

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self):
        return len(self.data)

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

    @property
    def T(self):
        return transpose(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _needs_grad(*tensors):
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _make(data, inputs, rule, ctx=None, name=""):
    out = Tensor(data, dtype=data.dtype)
    if _needs_grad(*inputs):
        out.requires_grad = True
        out.node = GraphNode(inputs, rule, ctx, name)
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), rule, name="add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), rule, name="sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), rule, name="mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")

    def rule(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data / b.data, (a, b), rule, name="div")


def relu(x):
    mask = x.data > 0

    def rule(g):
        # subgradient at 0 is 0
        return (g * mask,)

    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), rule, name="relu")


# ----------------------------------------------------------------------
# reductions and shape ops


def tsum(x):
    def rule(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _make(np.asarray(x.data.sum(), dtype=x.dtype), (x,), rule, name="sum")


def tmean(x):
    n = x.size

    def rule(g):
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return _make(np.asarray(x.data.mean(), dtype=x.dtype), (x,), rule, name="mean")


def reshape(x, shape):
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None

    def rule(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), rule, name="reshape")


def flatten(x):
    """Collapse all but the leading (batch) axis."""
    return reshape(x, (x.shape[0], -1))


def transpose(x):
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got shape {x.shape}")

    def rule(g):
        return (g.T,)

    return _make(np.ascontiguousarray(x.data.T), (x,), rule, name="transpose")


def _wide(*arrays):
    """Inference-time operands widened to float64.

    Without a graph to build, products are accumulated in float64 and cast
    back, so inference does not depend on BLAS summation order.
    """
    if _needs_grad(*arrays) or arrays[0].dtype != np.float32:
        return [t.data for t in arrays], None
    return [t.data.astype(np.float64) for t in arrays], np.float32


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    (ad, bd), narrow = _wide(a, b)
    out = ad @ bd
    if narrow is not None:
        out = out.astype(narrow)

    def rule(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), rule, name="matmul")


def linear(x, w, b=None):
    """``x @ w.T + b`` for ``w`` of shape (out, in)."""
    y = matmul(x, transpose(w))
    if b is not None:
        y = add(y, b)
    return y


# ----------------------------------------------------------------------
# convolution and pooling


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-d cross-correlation; ``x`` is NCHW, ``w`` is (O, C, K, K)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, c2, k, k2 = w.shape
    if c != c2 or k != k2:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    (xd, wd_), narrow = _wide(x, w)
    xp = _pad(xd, padding)
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {xp.shape}")
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # cols: (N, Ho, Wo, C*K*K)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho, wo, c * k * k)
    wmat = wd_.reshape(o, -1)
    out = (cols.reshape(-1, c * k * k) @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out if narrow is None else out.astype(narrow))
    if b is not None:
        out = out + b.data.reshape(1, o, 1, 1)

    def rule(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols.reshape(-1, c * k * k)).reshape(w.shape)
        gcols = (g2 @ wmat).reshape(n, ho, wo, c, k, k)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    inputs = (x, w) if b is None else (x, w, b)
    return _make(out.astype(x.dtype, copy=False), inputs, rule, name="conv2d")


def avgpool2d(x, kernel):
    """Non-overlapping average pooling (stride = kernel)."""
    n, c, h, w = x.shape
    if h % kernel or w % kernel:
        raise ShapeError(f"avgpool2d: spatial shape {x.shape[2:]} not divisible by {kernel}")
    ho, wo = h // kernel, w // kernel
    out = x.data.reshape(n, c, ho, kernel, wo, kernel).mean(axis=(3, 5))

    def rule(g):
        gx = np.repeat(np.repeat(g, kernel, axis=2), kernel, axis=3) / (kernel * kernel)
        return (gx.astype(x.dtype, copy=False),)

    return _make(out.astype(x.dtype, copy=False), (x,), rule, name="avgpool2d")


# ----------------------------------------------------------------------
# normalization and loss


def batchnorm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Batch norm over the batch (and spatial) axes.

    ``running_mean``/``running_var`` are numpy arrays updated in place when
    ``training`` is true.
    """
    if x.ndim == 4:
        axes, view = (0, 2, 3), (1, -1, 1, 1)
    elif x.ndim == 2:
        axes, view = (0,), (1, -1)
    else:
        raise ShapeError(f"batchnorm expects 2-d or 4-d input, got {x.shape}")
    if x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm: input {x.shape} vs {gamma.shape[0]} channels")
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(view)) * inv.reshape(view)
    out = xhat * gamma.data.reshape(view) + beta.data.reshape(view)

    def rule(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(view)
        if training:
            m = x.data.size // x.shape[1]
            gx = (inv.reshape(view) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes).reshape(view)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(view)
            )
        else:
            gx = gxhat * inv.reshape(view)
        return gx, gg, gb

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), rule, name="batchnorm")


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def rule(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1
        return ((g / n) * p,)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), rule, name="softmax_ce")


# ----------------------------------------------------------------------
# custom gradients and backward


def custom_grad(forward_fn, backward_fn, inputs, name="custom"):
    """Build a node whose value and gradient are supplied by the caller.

    ``forward_fn(*arrays)`` returns ``(value, ctx)``; ``backward_fn(g, ctx)``
    returns one gradient array per input. Autodiff never looks inside
    ``forward_fn``.
    """
    inputs = tuple(as_tensor(t) for t in inputs)
    value, ctx = forward_fn(*(t.data for t in inputs))
    value = np.asarray(value)
    if value.dtype not in (np.float32, np.float64):
        value = value.astype(inputs[0].dtype)

    def rule(g):
        grads = backward_fn(g, ctx)
        if not isinstance(grads, (tuple, list)):
            grads = (grads,)
        if len(grads) != len(inputs):
            raise ShapeError(f"{name}: backward returned {len(grads)} grads for {len(inputs)} inputs")
        for t, gr in zip(inputs, grads):
            if gr is not None and np.shape(gr) != t.shape:
                raise ShapeError(f"{name}: backward gradient shape {np.shape(gr)} != input shape {t.shape}")
        return tuple(grads)

    return _make(value, inputs, rule, ctx=ctx, name=name)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.inputs:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss is not connected to any tensor requiring grad")
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(_topo_order(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.astype(t.dtype, copy=True) if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t.node.inputs, t.node.backward_rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
