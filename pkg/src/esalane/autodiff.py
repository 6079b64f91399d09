"""Minimal reverse-mode autodiff over float64 numpy arrays.

Everything is double precision so analytic gradients can be checked against
central finite differences at tight tolerances. Graphs are rebuilt every
step; ``backward()`` walks the tape once and accumulates into ``.grad``.
"""

from __future__ import annotations

import numpy as np

from . import backend

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        if _GRAD_ENABLED and vjp is not None:
            self._parents = tuple(parents)
            self._vjp = vjp
        else:
            self._parents = ()
            self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in order:
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return Tensor(out, (a, b),
                  lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return Tensor(out, (a, b),
                  lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return Tensor(out, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.data.shape),
                             _unbroadcast(g * a.data, b.data.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data
    return Tensor(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(s, (a,), lambda g: (g * s * (1.0 - s),))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return Tensor(e, (a,), lambda g: (g * e,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only strictly inside (lo, hi)."""
    a = as_tensor(a)
    mask = (a.data > lo) & (a.data < hi)
    return Tensor(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return Tensor(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if a.data.size == 0:
        raise ValueError("mean over an empty array")
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    out = a.data[key]

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return Tensor(out, (a,), vjp)


def concat(tensors, axis: int) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return Tensor(out, tuple(ts), lambda g: tuple(np.split(g, splits, axis=axis)))


def broadcast_new_axis(a, axis: int, size: int) -> Tensor:
    """Insert a new axis and broadcast it to ``size`` (gradient sums it back)."""
    a = as_tensor(a)
    expanded = np.expand_dims(a.data, axis)
    shape = list(expanded.shape)
    idx = axis if axis >= 0 else len(shape) + axis
    shape[idx] = size
    out = np.broadcast_to(expanded, shape).copy()
    return Tensor(out, (a,), lambda g: (g.sum(axis=axis) if axis >= 0 else g.sum(axis=idx),))


def conv2d(x, w, b, stride: int = 1, pad: int = 1) -> Tensor:
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    out = backend.conv2d_forward(x.data, w.data, b.data, stride, pad)
    height, width = x.data.shape[2], x.data.shape[3]
    kh, kw = w.data.shape[2], w.data.shape[3]

    def vjp(g):
        g = np.ascontiguousarray(g)
        gx = backend.conv2d_backward_input(g, w.data, height, width, stride, pad)
        gw, gb = backend.conv2d_backward_weight(g, x.data, kh, kw, stride, pad)
        return (gx, gw, gb)

    return Tensor(out, (x, w, b), vjp)


def upsample2x(x) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling of an NCHW tensor."""
    x = as_tensor(x)
    n, c, h, w = x.data.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return Tensor(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


_RESIZE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _resize_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Dense 1-D bilinear interpolation matrix (half-pixel-center convention)."""
    key = (n_src, n_dst)
    cached = _RESIZE_CACHE.get(key)
    if cached is not None:
        return cached
    m = np.zeros((n_dst, n_src))
    if n_src == n_dst:
        np.fill_diagonal(m, 1.0)
    else:
        src = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
        i0 = np.floor(src).astype(int)
        frac = src - i0
        lo = np.clip(i0, 0, n_src - 1)
        hi = np.clip(i0 + 1, 0, n_src - 1)
        for d in range(n_dst):
            m[d, lo[d]] += 1.0 - frac[d]
            m[d, hi[d]] += frac[d]
    _RESIZE_CACHE[key] = m
    return m


def resize_bilinear(x, out_hw: tuple[int, int]) -> Tensor:
    """Bilinear resize of an NCHW (or CHW) tensor; separable and linear."""
    x = as_tensor(x)
    h, w = x.data.shape[-2], x.data.shape[-1]
    ho, wo = out_hw
    ry = _resize_matrix(h, ho)
    rx = _resize_matrix(w, wo)
    out = np.matmul(ry, np.matmul(x.data, rx.T))

    def vjp(g):
        return (np.matmul(ry.T, np.matmul(g, rx)),)

    return Tensor(out, (x,), vjp)


def softmax(a, axis: int = -3) -> Tensor:
    """Numerically stabilized softmax along ``axis`` (default: channel of *CHW)."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return Tensor(s, (a,), vjp)


def cross_entropy(logits, labels, class_weights=None) -> Tensor:
    """Mean per-pixel cross entropy of (...,K,H,W) logits vs integer labels.

    ``class_weights`` (length K) reweights pixels; the loss is then the
    weighted mean, matching the usual per-class weighting convention.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    squeeze = logits.data.ndim == 3
    ldata = logits.data[None] if squeeze else logits.data
    lab = labels[None] if squeeze else labels
    n, k, h, w = ldata.shape
    if lab.shape != (n, h, w):
        raise ValueError(f"label shape {lab.shape} does not match logits {ldata.shape}")
    if lab.min() < 0 or lab.max() >= k:
        raise ValueError("label values outside [0, num_classes)")
    shifted = ldata - ldata.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    ni, hi, wi = np.ogrid[:n, :h, :w]
    picked = logp[ni, lab, hi, wi]
    if class_weights is None:
        pix_w = np.ones((n, h, w))
    else:
        cw = np.asarray(class_weights, dtype=np.float64)
        if cw.shape != (k,):
            raise ValueError("class_weights must have one entry per class")
        pix_w = cw[lab]
    wsum = pix_w.sum()
    loss = -(picked * pix_w).sum() / wsum

    def vjp(g):
        p = np.exp(logp)
        grad = p * pix_w[:, None]
        grad[ni, lab, hi, wi] -= pix_w
        grad *= float(g) / wsum
        return (grad[0] if squeeze else grad,)

    return Tensor(loss, (logits,), vjp)
