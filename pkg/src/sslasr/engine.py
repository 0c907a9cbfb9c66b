"""Minimal reverse-mode autodiff over dense NumPy arrays.

A Tape records every differentiable op applied to Tensors while it is
active. backward() replays the tape in reverse and accumulates gradients
into leaf tensors that have requires_grad set. Gradients accumulate
across repeated backward calls; call zero_grad() between steps.
"""

from __future__ import annotations

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)

# Global verification switch: when on, every op output is checked for
# NaN/Inf right after the forward computation.
_VERIFY = True


def set_verification(enabled: bool) -> None:
    global _VERIFY
    _VERIFY = bool(enabled)


def verification_enabled() -> bool:
    return _VERIFY


def _check_finite(op: str, data: np.ndarray) -> None:
    if _VERIFY and data.dtype in _FLOAT_DTYPES and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")


class Tensor:
    """Dense array with optional gradient tracking.

    data is treated as immutable once wrapped; mutate via new ops, not
    in place. grad is None until backward() deposits into it.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d scalars to 1-d
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None  # tape that produced this tensor, None for leaves

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._item_err()

    def _item_err(self):
        raise ValueError("item() requires a single-element tensor")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # Operator sugar; all routed through the recorded primitives.
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean_(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of ops; context manager activates it."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._dead = False

    def __enter__(self) -> "Tape":
        _push_tape(self)
        return self

    def __exit__(self, *exc):
        _pop_tape(self)
        return False

    def reset(self) -> None:
        """Drop all recorded nodes; tensors produced on this tape become unusable."""
        self.nodes.clear()
        self._dead = True


_TAPE_STACK: list[Tape] = []


def _push_tape(tape: Tape) -> None:
    _TAPE_STACK.append(tape)


def _pop_tape(tape: Tape) -> None:
    if not _TAPE_STACK or _TAPE_STACK[-1] is not tape:
        raise RuntimeError("tape exit order violated")
    _TAPE_STACK.pop()


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(op: str, inputs, out_data: np.ndarray, backward_fn) -> Tensor:
    _check_finite(op, out_data)
    tape = _active_tape()
    tensor_inputs = [t for t in inputs if isinstance(t, Tensor)]
    for t in tensor_inputs:
        if t._tape is not None and t._tape._dead:
            raise RuntimeError(f"tensor used after tape reset (op '{op}')")
    out = Tensor(out_data)
    if tape is not None and any(t.requires_grad for t in tensor_inputs):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(_Node(op, tuple(inputs), out, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce gradient g down to `shape` by summing broadcast axes."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every requiring leaf."""
    if loss.size != 1:
        raise ValueError("backward requires a scalar loss")
    if tape._dead:
        raise RuntimeError("backward on a reset tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(n.output) for n in tape.nodes}
    if id(loss) not in produced:
        _leaf_accumulate(loss, grads[id(loss)])
        return
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for t, ig in zip(node.inputs, in_grads):
            if ig is None or not isinstance(t, Tensor) or not t.requires_grad:
                continue
            ig = ig.astype(t.data.dtype, copy=False)
            if id(t) in produced:
                if id(t) in grads:
                    grads[id(t)] = grads[id(t)] + ig
                else:
                    grads[id(t)] = ig
            else:
                _leaf_accumulate(t, ig)


def _leaf_accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad = t.grad + g.astype(t.data.dtype, copy=False)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _record("add", (a, b), out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _record("sub", (a, b), out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", (a, b), out, bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires operands with ndim >= 2")
    out = a.data @ b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _record("matmul", (a, b), out, bwd)


def transpose(a: Tensor, axes=None) -> Tensor:
    ax = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    out = np.transpose(a.data, ax)
    inv = tuple(np.argsort(ax))
    return _record("transpose", (a,), out, lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    orig = a.shape
    return _record("reshape", (a,), out, lambda g: (g.reshape(orig),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", tuple(tensors), out, bwd)


def take(a: Tensor, key) -> Tensor:
    """Basic slicing (tuple of slices / ints, non-negative steps)."""
    out = a.data[key]
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[key] = g
        return (full,)

    return _record("slice", (a,), out, bwd)


def slice_axis(a: Tensor, axis: int, start: int, stop: int, step: int = 1) -> Tensor:
    if step <= 0:
        raise ValueError("slice_axis requires a positive step")
    key = [slice(None)] * a.ndim
    key[axis] = slice(start, stop, step)
    return take(a, tuple(key))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    return _record("log", (a,), out, lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return _record("relu", (a,), out, lambda g: (g * (a.data > 0),))


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_K = 0.044715


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    x = a.data
    u = _GELU_C * (x + _GELU_K * x**3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def bwd(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_K * x**2)
        dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du
        return (g * dy,)

    return _record("gelu", (a,), out, bwd)


def softmax(a: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Softmax along `axis`; mask (bool, broadcastable) True = position kept."""
    x = a.data
    if mask is not None:
        allowed = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if np.any(~allowed.any(axis=axis)):
            raise ValueError("fully masked softmax row")
        m = np.max(np.where(allowed, x, -np.inf), axis=axis, keepdims=True)
        e = np.exp(np.where(allowed, x - m, 0.0)) * allowed
    else:
        m = np.max(x, axis=axis, keepdims=True)
        e = np.exp(x - m)
    p = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - dot),)

    return _record("softmax", (a,), p, bwd)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with population variance, then affine."""
    x = a.data
    if x.shape[-1] == 0:
        raise ValueError("layer_norm over an empty last axis")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = gamma.data * xhat + beta.data

    def bwd(g):
        gx_hat = g * gamma.data
        m1 = gx_hat.mean(axis=-1, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
        ga = inv * (gx_hat - m1 - xhat * m2)
        axes = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=axes) if axes else g * xhat
        gbeta = g.sum(axis=axes) if axes else g
        return ga, _unbroadcast(ggamma, gamma.shape), _unbroadcast(gbeta, beta.shape)

    return _record("layer_norm", (a, gamma, beta), out, bwd)


def conv1d(x: Tensor, w: Tensor, b=None, stride: int = 1, padding: str = "causal") -> Tensor:
    """1-D convolution (really correlation) over time.

    x: (B, T, Cin), w: (K, Cin, Cout), b: (Cout,) or None.
    padding 'causal' pads K-1 zeros on the left (output length ceil(T/stride)),
    'same' pads symmetrically (left gets the smaller half), 'none' pads nothing
    (output length floor((T-K)/stride)+1).
    """
    if stride < 1:
        raise ValueError("conv1d stride must be >= 1")
    B, T, Cin = x.shape
    K, Cin_w, Cout = w.shape
    if Cin != Cin_w:
        raise ValueError("conv1d channel mismatch")
    if padding == "causal":
        left, right = K - 1, 0
        t_out = -(-T // stride)
    elif padding == "same":
        total = K - 1
        left = total // 2
        right = total - left
        t_out = -(-T // stride)
    elif padding == "none":
        left = right = 0
        if T < K:
            raise ValueError("conv1d input shorter than kernel with padding 'none'")
        t_out = (T - K) // stride + 1
    else:
        raise ValueError(f"unknown conv1d padding '{padding}'")

    xp = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    Tp = xp.shape[1]
    # extra right pad so the last strided window fits
    need = (t_out - 1) * stride + K
    if need > Tp:
        xp = np.pad(xp, ((0, 0), (0, need - Tp), (0, 0)))
        Tp = need
    # windows: (B, t_out, K, Cin) via stride tricks
    sB, sT, sC = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(B, t_out, K, Cin), strides=(sB, sT * stride, sT, sC), writeable=False
    )
    out = np.einsum("btkc,kcd->btd", win, w.data, optimize=True)
    if b is not None:
        out = out + b.data

    def bwd(g):
        gw = np.einsum("btkc,btd->kcd", win, g, optimize=True)
        gxp = np.zeros_like(xp)
        # scatter g back through the windows
        for k in range(K):
            idx = k + stride * np.arange(t_out)
            np.add.at(gxp, (slice(None), idx), np.einsum("btd,cd->btc", g, w.data[k], optimize=True))
        gx = gxp[:, left : left + T]
        gb = g.sum(axis=(0, 1)) if b is not None else None
        if b is not None:
            return gx, gw, _unbroadcast(gb, b.shape)
        return gx, gw

    inputs = (x, w) if b is None else (x, w, b)
    return _record("conv1d", inputs, np.ascontiguousarray(out), bwd)


def embedding(table: Tensor, indices) -> Tensor:
    """Row lookup; indices is an integer ndarray, gradients scatter-add."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("embedding indices must be integers")
    out = table.data[idx]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record("embedding", (table,), out, bwd)


def masked_fill(a: Tensor, mask, value: float) -> Tensor:
    """Replace positions where mask is True with `value` (constant)."""
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    out = np.where(m, np.asarray(value, dtype=a.dtype), a.data)
    return _record("masked_fill", (a,), out, lambda g: (np.where(m, 0.0, g),))


def where_mask(a: Tensor, b: Tensor, mask) -> Tensor:
    """Elementwise select: mask True takes a, False takes b."""
    m = np.asarray(mask, dtype=bool)
    out = np.where(m, a.data, b.data)

    def bwd(g):
        mb = np.broadcast_to(m, g.shape)
        return _unbroadcast(np.where(mb, g, 0.0), a.shape), _unbroadcast(np.where(mb, 0.0, g), b.shape)

    return _record("where", (a, b), out, bwd)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _record("sum", (a,), np.asarray(out), _reduce_bwd(a.shape, axis, keepdims))


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.size if axis is None else np.prod([a.shape[i] for i in _norm_axes(axis, a.ndim)])
    inner = _reduce_bwd(a.shape, axis, keepdims)
    return _record("mean", (a,), np.asarray(out), lambda g: (inner(g)[0] / n,))


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _reduce_bwd(shape, axis, keepdims):
    def bwd(g):
        g = np.asarray(g)
        if not keepdims and axis is not None:
            g = np.expand_dims(g, _norm_axes(axis, len(shape)))
        return (np.broadcast_to(g, shape).copy(),)

    return bwd


def max_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; gradient flows to the first max position only."""
    x = a.data
    out = x.max(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            onehot = np.zeros_like(x)
            onehot.reshape(-1)[np.argmax(x)] = 1.0
            return (onehot * g,)
        ax = axis % x.ndim
        idx = np.argmax(x, axis=ax)
        onehot = np.zeros_like(x)
        np.put_along_axis(onehot, np.expand_dims(idx, ax), 1.0, axis=ax)
        ge = np.asarray(g)
        if not keepdims:
            ge = np.expand_dims(ge, ax)
        return (onehot * ge,)

    return _record("max", (a,), np.asarray(out), bwd)


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Cosine similarity along `axis`; zero-norm operands are an error."""
    xa, xb = a.data, b.data
    na = np.sqrt((xa**2).sum(axis=axis, keepdims=True))
    nb = np.sqrt((xb**2).sum(axis=axis, keepdims=True))
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("degenerate similarity input")
    dot = (xa * xb).sum(axis=axis, keepdims=True)
    c = dot / (na * nb)
    out = np.squeeze(c, axis=axis)

    def bwd(g):
        ge = np.expand_dims(np.asarray(g), axis)
        ga = ge * (xb / (na * nb) - c * xa / (na * na))
        gb = ge * (xa / (na * nb) - c * xb / (nb * nb))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("cosine_similarity", (a, b), out, bwd)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Per-row negative log-likelihood of integer targets.

    logits: (..., V), targets: integer array of shape (...). Returns a
    tensor shaped like targets (no reduction).
    """
    idx = np.asarray(targets)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("cross_entropy targets must be integers")
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    lse = m[..., 0] + np.log(e.sum(axis=-1))
    picked = np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]
    out = lse - picked

    def bwd(g):
        p = e / e.sum(axis=-1, keepdims=True)
        onehot = np.zeros_like(x)
        np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
        return ((p - onehot) * np.asarray(g)[..., None],)

    return _record("cross_entropy", (logits,), out, bwd)


def detach(a: Tensor) -> Tensor:
    return a.detach()


# ---------------------------------------------------------------------------
# composed helpers (no new primitives, gradients come from composition)
# ---------------------------------------------------------------------------


def abs_(a: Tensor) -> Tensor:
    return add(relu(a), relu(-a))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = max_(a, axis=axis, keepdims=True)
    z = sub(a, m)
    lse = log(sum_(exp(z), axis=axis, keepdims=True))
    return sub(z, lse)


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = max_(a, axis=axis, keepdims=True)
    s = log(sum_(exp(sub(a, m)), axis=axis, keepdims=True))
    out = add(m, s)
    if not keepdims:
        ax = axis % a.ndim
        new_shape = tuple(d for i, d in enumerate(a.shape) if i != ax)
        out = reshape(out, new_shape)
    return out


def straight_through(soft: Tensor, hard: np.ndarray) -> Tensor:
    """Forward emits `hard`, backward follows `soft`."""
    delta = Tensor(hard - soft.data)
    return add(soft, delta)
