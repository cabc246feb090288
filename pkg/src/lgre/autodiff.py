"""Dense tensors with reverse-mode automatic differentiation.

Values live in numpy arrays; every operation records a closure that routes
the output gradient back to its parents. Graphs are built per forward pass
and torn down with it, so tensors are never mutated while a graph that
references them is alive (parameter updates happen between steps).

Precision is a process-global switch: 64-bit by default, 32-bit selectable
for speed. Gradient checks are only meaningful at 64-bit.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, IntegrityError

_DTYPES = {"f64": np.float64, "f32": np.float32}
_dtype = np.float64
_grad_enabled = True


def set_precision(mode):
    """Select the global float width: "f64" (default) or "f32"."""
    global _dtype
    if mode not in _DTYPES:
        raise ConfigError(f"unknown precision {mode!r}; expected one of {sorted(_DTYPES)}")
    _dtype = _DTYPES[mode]


def precision():
    return "f64" if _dtype is np.float64 else "f32"


class no_grad:
    """Context manager that disables graph recording (evaluation fast path)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_dtype)
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

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph -------------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad of every reachable leaf.

        Only defined for scalar outputs (losses)."""
        if self.size != 1:
            raise DimensionError(f"backward() requires a scalar, got shape {self.shape}")
        order = _toposort(self)
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root):
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
        for p in node._parents:
            stack.append((p, False))
    return order


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _from_op(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum g down to `shape` (reverses numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- arithmetic --------------------------------------------------------------

def add(a, b):
    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _from_op(a.data + b.data, (a, b), backward)


def mul(a, b):
    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _from_op(a.data * b.data, (a, b), backward)


def neg(a):
    def backward(g):
        if a.requires_grad:
            _accumulate(a, -g)

    return _from_op(-a.data, (a,), backward)


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} x {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _from_op(a.data @ b.data, (a, b), backward)


def transpose(a):
    def backward(g):
        if a.requires_grad:
            _accumulate(a, g.T)

    return _from_op(a.data.T, (a,), backward)


def reshape(a, shape):
    def backward(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _from_op(a.data.reshape(shape), (a,), backward)


def concat(tensors, axis):
    tensors = tuple(tensors)
    widths = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    return _from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            _accumulate(a, full)

    return _from_op(a.data[idx].copy(), (a,), backward)


def take(table, indices):
    """Gather rows of a 2-D table; `indices` may be any integer ndarray.

    Output shape is indices.shape + (row_width,). Out-of-range indices are a
    hard error because they always mean a vocabulary mismatch upstream.
    """
    indices = np.asarray(indices)
    if table.ndim != 2:
        raise DimensionError(f"take expects a 2-D table, got shape {table.shape}")
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise IntegrityError(
            f"index out of range for table with {table.shape[0]} rows: "
            f"[{indices.min()}, {indices.max()}]")

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, indices.reshape(-1), g.reshape(-1, table.shape[1]))
            _accumulate(table, full)

    return _from_op(table.data[indices], (table,), backward)


def gather_cols(a, indices):
    """out[i, j] = a[i, indices[i, j]] for a 2-D tensor."""
    indices = np.asarray(indices)
    rows = np.arange(a.shape[0])[:, None]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, (np.broadcast_to(rows, indices.shape), indices), g)
            _accumulate(a, full)

    return _from_op(a.data[rows, indices], (a,), backward)


def sum_(a, axis=None, keepdims=False):
    def backward(g):
        if a.requires_grad:
            if axis is None:
                _accumulate(a, np.broadcast_to(g, a.shape).copy())
            else:
                _accumulate(a, np.broadcast_to(np.expand_dims(g, axis) if not keepdims else g,
                                               a.shape).copy())

    return _from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a):
    n = a.size

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(g / n, a.shape).copy())

    return _from_op(a.data.mean(), (a,), backward)


def log(a):
    def backward(g):
        if a.requires_grad:
            _accumulate(a, g / a.data)

    return _from_op(np.log(a.data), (a,), backward)


def abs_(a):
    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * np.sign(a.data))

    return _from_op(np.abs(a.data), (a,), backward)


def clip(a, lo, hi):
    """Clamp values to [lo, hi]; gradient is zero outside the interval."""
    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * ((a.data >= lo) & (a.data <= hi)))

    return _from_op(np.clip(a.data, lo, hi), (a,), backward)


# -- activations -------------------------------------------------------------

def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    y = _sigmoid(a.data)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * y * (1.0 - y))

    return _from_op(y, (a,), backward)


def tanh(a):
    y = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * (1.0 - y * y))

    return _from_op(y, (a,), backward)


def relu(a):
    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * (a.data > 0))

    return _from_op(np.maximum(a.data, 0.0), (a,), backward)


def leaky_relu(a, slope=0.01):
    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * np.where(a.data > 0, 1.0, slope))

    return _from_op(np.where(a.data > 0, a.data, slope * a.data), (a,), backward)


def softmax(a, axis=-1):
    """Row-stochastic softmax with max-subtraction stabilization."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accumulate(a, y * (g - dot))

    return _from_op(y, (a,), backward)


def dropout(a, rate, training, rng=None):
    """Inverted dropout: survivors are scaled by 1/(1-rate); eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        def backward(g):
            if a.requires_grad:
                _accumulate(a, g)

        return _from_op(a.data.copy(), (a,), backward)
    if rng is None:
        raise IntegrityError("dropout in training mode needs an explicit rng")
    scale = 1.0 / (1.0 - rate)
    mask = (rng.random(a.shape) >= rate) * scale

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * mask)

    return _from_op(a.data * mask, (a,), backward)


# -- convolution -------------------------------------------------------------

def _check_kernel(kshape, in_channels):
    c_in, kh, kw = kshape[-3], kshape[-2], kshape[-1]
    if kh != kw:
        raise DimensionError(f"kernel must be square, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ConfigError(f"kernel size must be odd for same-padding, got {kh}")
    if c_in != in_channels:
        raise DimensionError(
            f"kernel expects {c_in} input channels, feature map has {in_channels}")
    return kh


def conv2d_batch(inputs, kernels):
    """Per-sample 2-D cross-correlation, stride 1, zero same-padding, no bias.

    inputs: (B, C_in, H, W); kernels: (B, C_out, C_in, k, k). Every sample is
    convolved with its own kernel, which is what generated filters need.
    """
    if inputs.ndim != 4 or kernels.ndim != 5:
        raise DimensionError(
            f"conv2d_batch expects (B,C,H,W) and (B,O,C,k,k), got {inputs.shape} and {kernels.shape}")
    if inputs.shape[0] != kernels.shape[0]:
        raise DimensionError(
            f"batch mismatch: {inputs.shape[0]} inputs vs {kernels.shape[0]} kernels")
    b, c_in, h, w = inputs.shape
    k = _check_kernel(kernels.shape, c_in)
    c_out = kernels.shape[1]
    p = (k - 1) // 2
    padded = np.pad(inputs.data, ((0, 0), (0, 0), (p, p), (p, p)))
    kdata = kernels.data
    out = np.zeros((b, c_out, h, w), dtype=inputs.data.dtype)
    for i in range(k):
        for j in range(k):
            out += np.einsum("boc,bchw->bohw", kdata[:, :, :, i, j],
                             padded[:, :, i:i + h, j:j + w], optimize=True)

    def backward(g):
        if inputs.requires_grad:
            dpad = np.zeros_like(padded)
            for i in range(k):
                for j in range(k):
                    dpad[:, :, i:i + h, j:j + w] += np.einsum(
                        "boc,bohw->bchw", kdata[:, :, :, i, j], g, optimize=True)
            _accumulate(inputs, dpad[:, :, p:p + h, p:p + w])
        if kernels.requires_grad:
            dk = np.zeros_like(kdata)
            for i in range(k):
                for j in range(k):
                    dk[:, :, :, i, j] = np.einsum(
                        "bohw,bchw->boc", g, padded[:, :, i:i + h, j:j + w], optimize=True)
            _accumulate(kernels, dk)

    return _from_op(out, (inputs, kernels), backward)


def conv2d(input_, kernel):
    """Single-sample convolution: (C_in,H,W) x (C_out,C_in,k,k) -> (C_out,H,W)."""
    if input_.ndim != 3 or kernel.ndim != 4:
        raise DimensionError(
            f"conv2d expects (C,H,W) and (O,C,k,k), got {input_.shape} and {kernel.shape}")
    batched = conv2d_batch(reshape(input_, (1,) + input_.shape),
                           reshape(kernel, (1,) + kernel.shape))
    return reshape(batched, batched.shape[1:])


# -- recurrent cell -----------------------------------------------------------

@dataclass
class GruWeights:
    """One GRU cell; matrices are (in, out) and applied batch-major (x @ W)."""
    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wh: Tensor
    uh: Tensor
    bh: Tensor

    def named(self, prefix="gru"):
        return {f"{prefix}.{f}": getattr(self, f)
                for f in ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")}


def gru_cell(x, h, w):
    """One gated-recurrent step: out = (1-z)*h + z*htilde.

    x, h: (batch, d). Update gate z and reset gate r are sigmoid-gated; the
    candidate state uses the reset-scaled hidden state.
    """
    if x.shape != h.shape:
        raise DimensionError(f"gru_cell: x {x.shape} and h {h.shape} must match")
    z = sigmoid(matmul(x, w.wz) + matmul(h, w.uz) + w.bz)
    r = sigmoid(matmul(x, w.wr) + matmul(h, w.ur) + w.br)
    htilde = tanh(matmul(x, w.wh) + matmul(mul(r, h), w.uh) + w.bh)
    one = Tensor(np.ones_like(z.data))
    return add(mul(one - z, h), mul(z, htilde))
