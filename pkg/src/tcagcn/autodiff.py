"""Dense float64 tensors with a reverse-mode tape.

Every op returns a fresh array (no views are shared between tape nodes),
records a closure mapping the output adjoint to input adjoints, and is
differentiated by :func:`backward`.  Only the operations the network needs
are provided.
"""

import math
import threading
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "GraphError",
    "tensor",
    "add",
    "sub",
    "mul",
    "relu",
    "tanh",
    "sigmoid",
    "elementwise",
    "matmul",
    "linear",
    "einsum",
    "joint_mix",
    "conv_temporal",
    "max_pool_temporal",
    "pool",
    "batch_norm",
    "reshape",
    "transpose",
    "concat",
    "tsum",
    "cross_entropy",
    "backward",
    "gradcheck",
    "kink_monitor",
]


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


class _Consumed:
    def __call__(self, g):
        raise GraphError("graph already consumed by backward(); rerun the forward pass")


_CONSUMED = _Consumed()

# Test hook: op name -> callable applied to that op's input adjoints.
_GRAD_HOOKS = {}

_local = threading.local()


class Tensor:
    """Row-major float64 array that may take part in a tape.

    ``grad`` is populated on leaves that require grad after :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._op is None

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, grad_fn, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = grad_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    assert g.shape == shape, (g.shape, shape)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


# --- kink tracking -------------------------------------------------------


@contextmanager
def kink_monitor():
    """Record the smallest distance to a non-differentiable point.

    Yields a dict whose ``"margin"`` entry is the minimum, over every relu
    input and every max-pool window (top value minus runner-up, exact ties
    excluded), seen while the context is active.
    """
    record = {"margin": math.inf}
    prev = getattr(_local, "kinks", None)
    _local.kinks = record
    try:
        yield record
    finally:
        _local.kinks = prev


def _note_margin(value):
    record = getattr(_local, "kinks", None)
    if record is not None and value < record["margin"]:
        record["margin"] = float(value)


# --- elementwise ---------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _node(a.data + b.data, (a, b), grad_fn, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _node(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _node(ad * bd, (a, b), grad_fn, "mul")


def relu(x):
    x = _as_tensor(x)
    if getattr(_local, "kinks", None) is not None and x.size:
        _note_margin(np.abs(x.data).min())
    mask = x.data > 0

    def grad_fn(g):
        return (g * mask,)

    return _node(np.where(mask, x.data, 0.0), (x,), grad_fn, "relu")


def tanh(x):
    x = _as_tensor(x)
    y = np.tanh(x.data)

    def grad_fn(g):
        return (g * (1.0 - y * y),)

    return _node(y, (x,), grad_fn, "tanh")


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    x = _as_tensor(x)
    y = _sigmoid(x.data)

    def grad_fn(g):
        return (g * y * (1.0 - y),)

    return _node(y, (x,), grad_fn, "sigmoid")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def elementwise(op, a, b=None):
    """Dispatch one of add/sub/mul/relu/tanh/sigmoid by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if op in ("add", "sub", "mul"):
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return fn(a, b)
    return fn(a)


def activation(name):
    """Look up a unary activation by name ('relu' or 'tanh' or 'sigmoid')."""
    if name not in ("relu", "tanh", "sigmoid"):
        raise ValueError(f"unknown activation {name!r}")
    return _ELEMENTWISE[name]


# --- linear algebra ------------------------------------------------------


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        return g @ bd.T, ad.T @ g

    return _node(ad @ bd, (a, b), grad_fn, "matmul")


def linear(x, weight, bias=None, transpose=False):
    """Apply ``x @ weight + bias`` over the last axis of ``x``.

    With ``transpose=True`` the weight is stored as ``(C_out, C_in)``.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    c_in = weight.shape[1] if transpose else weight.shape[0]
    if weight.ndim != 2 or x.shape[-1] != c_in:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd = x.data
    wd = weight.data.T if transpose else weight.data
    out = xd @ wd
    parents = (x, weight)
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def grad_fn(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            if transpose:
                gw = gw.T.copy()
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _node(out, parents, grad_fn, "linear")


def joint_mix(s, a):
    """Per-channel joint mixing ``F[..., t, n, c] = sum_m S[..., n, m, c] * A[..., t, m, c]``.

    ``s`` may omit the leading axes of ``a``; it is then shared across them.
    """
    s, a = _as_tensor(s), _as_tensor(a)
    if s.ndim < 3 or a.ndim < 3 or s.shape[-3] != s.shape[-2] or s.shape[-2:] != a.shape[-2:]:
        raise ShapeError(f"topology {s.shape} does not match features {a.shape}")
    s_lead, a_lead = s.shape[:-3], a.shape[:-3]
    if s_lead and s_lead != a_lead:
        raise ShapeError(f"topology {s.shape} and features {a.shape} disagree on leading axes")
    st = np.moveaxis(s.data, -1, -3)  # (..., c, n, m)
    at = np.moveaxis(a.data, -1, -3)  # (..., c, t, m)
    out = np.ascontiguousarray(np.moveaxis(at @ np.swapaxes(st, -1, -2), -3, -1))

    def grad_fn(g):
        gt = np.moveaxis(g, -1, -3)  # (..., c, t, n)
        ga = np.ascontiguousarray(np.moveaxis(gt @ st, -3, -1)) if a.requires_grad else None
        gs = None
        if s.requires_grad:
            gs = np.moveaxis(np.swapaxes(gt, -1, -2) @ at, -3, -1)  # (..., n, m, c)
            while gs.ndim > s.ndim:
                gs = gs.sum(axis=0)
            gs = np.ascontiguousarray(gs)
        return gs, ga

    return _node(out, (s, a), grad_fn, "joint_mix")


def einsum(subscripts, a, b):
    """Two-operand einsum with explicit subscripts (no ellipsis).

    Every index of an operand must also appear in the output or in the
    other operand, so each adjoint is itself an einsum.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    ins, out = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        missing = set(s) - set(out) - set(other)
        if missing:
            raise ValueError(f"einsum index {sorted(missing)} is reduced inside a single operand")
    try:
        data = np.einsum(subscripts, a.data, b.data, optimize=True)
    except ValueError as exc:
        raise ShapeError(f"einsum {subscripts!r} on {a.shape} and {b.shape}: {exc}") from None
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = np.einsum(f"{out},{sb}->{sa}", g, bd, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out},{sa}->{sb}", g, ad, optimize=True) if b.requires_grad else None
        return ga, gb

    return _node(data, (a, b), grad_fn, "einsum")


# --- temporal convolution and pooling ------------------------------------


def _temporal_taps(t_len, kernel_size, stride, dilation):
    pad = dilation * (kernel_size - 1) // 2
    t_out = -(-t_len // stride)
    return pad, t_out


def conv_temporal(x, kernel, bias=None, stride=1, dilation=1):
    """1-D convolution along the frame axis (-3) of a ``(..., T, N, C)`` array.

    ``kernel`` has shape ``(K, C_in, C_out)``.  Zero padding keeps the length
    at ``T`` for stride 1; in general the output has ``ceil(T / stride)``
    frames.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if kernel.ndim != 3:
        raise ShapeError(f"kernel must be (K, C_in, C_out), got {kernel.shape}")
    k_size, c_in, c_out = kernel.shape
    if k_size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k_size}")
    if stride not in (1, 2) or dilation not in (1, 2):
        raise ValueError(f"stride and dilation must be 1 or 2, got {stride}, {dilation}")
    if x.ndim < 3 or x.shape[-1] != c_in:
        raise ShapeError(f"input {x.shape} does not match kernel {kernel.shape}")
    t_len = x.shape[-3]
    if t_len < 1:
        raise ValueError("T must be at least 1")
    pad, t_out = _temporal_taps(t_len, k_size, stride, dilation)
    widths = [(0, 0)] * x.ndim
    widths[-3] = (pad, pad)
    xp = np.pad(x.data, widths)
    span = stride * (t_out - 1) + 1
    taps = [xp[..., k * dilation : k * dilation + span : stride, :, :] for k in range(k_size)]
    cols = np.concatenate(taps, axis=-1)  # (..., T', N, K*C_in)
    w2 = kernel.data.reshape(k_size * c_in, c_out)
    out = cols @ w2
    parents = (x, kernel)
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data
        parents = (x, kernel, bias)

    def grad_fn(g):
        gx = None
        if x.requires_grad:
            gcols = g @ w2.T
            gxp = np.zeros_like(xp)
            for k in range(k_size):
                gxp[..., k * dilation : k * dilation + span : stride, :, :] += gcols[..., k * c_in : (k + 1) * c_in]
            gx = gxp[..., pad : pad + t_len, :, :].copy()
        gk = None
        if kernel.requires_grad:
            gk = (cols.reshape(-1, k_size * c_in).T @ g.reshape(-1, c_out)).reshape(k_size, c_in, c_out)
        if bias is None:
            return gx, gk
        return gx, gk, g.reshape(-1, c_out).sum(axis=0)

    return _node(out, parents, grad_fn, "conv_temporal")


def max_pool_temporal(x, window=3, stride=1):
    """Max over a sliding window of frames, same-padded; ties go to the earliest frame."""
    x = _as_tensor(x)
    if window % 2 == 0:
        raise ValueError("window must be odd")
    t_len = x.shape[-3]
    pad, t_out = _temporal_taps(t_len, window, stride, 1)
    widths = [(0, 0)] * x.ndim
    widths[-3] = (pad, pad)
    xp = np.pad(x.data, widths, constant_values=-np.inf)
    span = stride * (t_out - 1) + 1
    stack = np.stack([xp[..., k : k + span : stride, :, :] for k in range(window)])
    idx = stack.argmax(axis=0)
    out = np.take_along_axis(stack, idx[None], axis=0)[0]
    if getattr(_local, "kinks", None) is not None and window > 1:
        part = np.sort(stack, axis=0)
        gap = part[-1] - part[-2]
        gap = gap[np.isfinite(gap) & (gap > 0)]
        if gap.size:
            _note_margin(gap.min())

    def grad_fn(g):
        gxp = np.zeros(xp.shape)
        for k in range(window):
            gxp[..., k : k + span : stride, :, :] += np.where(idx == k, g, 0.0)
        return (gxp[..., pad : pad + t_len, :, :].copy(),)

    return _node(out, (x,), grad_fn, "max_pool_temporal")


def pool(x, axes, mode="mean", keepdims=False):
    """Reduce ``x`` over ``axes`` by mean or max (max ties route to the lowest index)."""
    x = _as_tensor(x)
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(sorted(a % x.ndim for a in axes))
    if not axes:
        raise ValueError("pool needs at least one axis")
    if len(set(axes)) != len(axes) or any(a >= x.ndim for a in axes):
        raise ValueError(f"invalid axes {axes} for shape {x.shape}")
    shape = x.shape
    n = int(np.prod([shape[a] for a in axes]))
    if n == 0:
        raise ValueError("cannot pool over an empty axis")
    kept = tuple(a for a in range(x.ndim) if a not in axes)
    if mode == "mean":
        out = x.data.mean(axis=axes, keepdims=True)
        kept_shape = out.shape

        def grad_fn(g):
            g = g.reshape(kept_shape)
            return (np.broadcast_to(g / n, shape).copy(),)

    elif mode == "max":
        # move reduced axes to the end, flatten them, argmax picks the first maximum
        perm = kept + axes
        moved = np.transpose(x.data, perm).reshape([shape[a] for a in kept] + [n])
        idx = moved.argmax(axis=-1)
        best = np.take_along_axis(moved, idx[..., None], axis=-1)
        out = best.reshape([shape[a] if a in kept else 1 for a in range(x.ndim)])

        def grad_fn(g):
            gm = np.zeros(moved.shape)
            np.put_along_axis(gm, idx[..., None], g.reshape(best.shape), axis=-1)
            gm = gm.reshape([shape[a] for a in perm])
            return (np.transpose(gm, np.argsort(perm)).copy(),)

    else:
        raise ValueError(f"unknown pool mode {mode!r}")
    if not keepdims:
        out = out.reshape([shape[a] for a in kept])
    return _node(np.array(out), (x,), grad_fn, f"pool_{mode}")


# --- normalization -------------------------------------------------------


def batch_norm(x, gamma, beta, running_mean, running_var, training=True, momentum=0.9, eps=1e-5):
    """Per-channel normalization over every axis but the last.

    In training mode the batch statistics are used and the running arrays are
    updated in place as ``momentum * running + (1 - momentum) * batch``.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm parameters {gamma.shape} do not match {c} channels")
    axes = tuple(range(x.ndim - 1))
    n = x.size // c if c else 0
    if n == 0:
        raise ValueError("batch_norm on an empty batch")
    xd, gd = x.data, gamma.data
    if training:
        mean = xd.mean(axis=axes)
        centered = xd - mean
        var = (centered * centered).mean(axis=axes)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * (var * n / (n - 1) if n > 1 else var)

        def grad_fn(g):
            gx = None
            if x.requires_grad:
                dxhat = g * gd
                s1 = dxhat.sum(axis=axes)
                s2 = (dxhat * xhat).sum(axis=axes)
                gx = inv / n * (n * dxhat - s1 - xhat * s2)
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (xd - running_mean) * inv

        def grad_fn(g):
            return g * gd * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _node(xhat * gd + beta.data, (x, gamma, beta), grad_fn, "batch_norm")


# --- shape plumbing ------------------------------------------------------


def reshape(x, shape):
    x = _as_tensor(x)
    old = x.shape
    try:
        data = x.data.reshape(shape).copy()
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {shape}") from None

    def grad_fn(g):
        return (g.reshape(old),)

    return _node(data, (x,), grad_fn, "reshape")


def transpose(x, axes):
    x = _as_tensor(x)
    inverse = np.argsort(axes)

    def grad_fn(g):
        return (np.ascontiguousarray(np.transpose(g, inverse)),)

    return _node(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), grad_fn, "transpose")


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(p.copy() for p in np.split(g, bounds, axis=axis))

    return _node(data, tuple(tensors), grad_fn, "concat")


def tsum(x):
    x = _as_tensor(x)
    shape = x.shape

    def grad_fn(g):
        return (np.full(shape, float(g)),)

    return _node(np.array(x.data.sum()), (x,), grad_fn, "sum")


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy of ``(B, K)`` logits against integer labels."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(z.shape[0])
    loss = -logp[rows, labels].mean()

    def grad_fn(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (float(g) / z.shape[0]),)

    return _node(np.array(loss), (logits,), grad_fn, "cross_entropy")


# --- reverse sweep -------------------------------------------------------


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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Fill ``.grad`` on every leaf reachable from the scalar ``loss``.

    The tape is released afterwards; a second call on the same graph raises
    :class:`GraphError`.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward is _CONSUMED:
        _CONSUMED(None)
    if not loss.requires_grad:
        raise GraphError("loss is detached: no input requires grad")
    order = _topo_order(loss)
    grads = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            node._backward = _CONSUMED
            continue
        fn = node._backward
        if fn is _CONSUMED:
            _CONSUMED(None)
        in_grads = fn(g)
        hook = _GRAD_HOOKS.get(node._op)
        if hook is not None:
            in_grads = hook(in_grads)
        for p, pg in zip(node._parents, in_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        node._backward = _CONSUMED
        node._parents = ()


@contextmanager
def corrupt_backward(op, scale=1.01):
    """Scale the input adjoints of every ``op`` node; negative control for gradient checks."""
    def hook(grads):
        return tuple(None if g is None else g * scale for g in grads)

    _GRAD_HOOKS[op] = hook
    try:
        yield
    finally:
        _GRAD_HOOKS.pop(op, None)


def relative_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.abs(a - b) / denom


def numeric_grad(f, arrays, eps=1e-5):
    """Central differences of scalar ``f()`` w.r.t. each array, perturbed in place."""
    out = []
    for arr in arrays:
        g = np.zeros(arr.shape)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f()
            flat[i] = orig - eps
            fm = f()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise FloatingPointError("non-finite output during finite differences")
            gflat[i] = (fp - fm) / (2.0 * eps)
        out.append(g)
    return out


def gradcheck(f, x, eps=1e-5):
    """Max relative error between the tape gradient of ``f`` at ``x`` and central differences.

    ``f`` maps a Tensor to a scalar Tensor; the relative error of each
    coordinate uses the denominator ``max(|a|, |b|, 1e-8)``.
    """
    x = _as_tensor(x)
    base = x.data.copy()
    leaf = Tensor(base, requires_grad=True)
    out = f(leaf)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("f produced non-finite output")
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros(base.shape)
    probe = base.copy()

    def value():
        return float(f(Tensor(probe)).data.sum())

    (numeric,) = numeric_grad(value, [probe], eps)
    return float(relative_error(analytic, numeric).max())
