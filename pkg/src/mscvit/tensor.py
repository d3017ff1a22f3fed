"""A small reverse-mode autodiff engine on top of numpy.

Every op returns a new ``Tensor``. When gradients are enabled and any input
requires them, the output remembers its parents and a closure that maps the
output gradient to one gradient per parent. ``Tensor.backward`` walks the
recorded graph once in reverse topological order and frees it afterwards.
"""

from __future__ import annotations

import contextlib
from collections import defaultdict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

_grad_enabled = True
_mac_counter = None
_scope = []

FLOAT_TYPES = (np.float32, np.float64)


class GraphFreedError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Run ops without recording a graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


@contextlib.contextmanager
def count_macs():
    """Collect multiply-accumulate counts of every matmul/conv run inside.

    Yields a dict mapping a '/'-joined scope path to the MACs recorded there.
    """
    global _mac_counter
    prev = _mac_counter
    counts = defaultdict(int)
    _mac_counter = counts
    try:
        yield counts
    finally:
        _mac_counter = prev


@contextlib.contextmanager
def mac_scope(name):
    _scope.append(name)
    try:
        yield
    finally:
        _scope.pop()


def _record_macs(n):
    if _mac_counter is not None:
        _mac_counter["/".join(_scope)] += int(n)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_freed")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_TYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = None
        self._freed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

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
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def backward(self, grad=None):
        if self._freed:
            raise GraphFreedError(
                "this graph was already consumed by backward(); run the forward pass again"
            )
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)

        order = _topo_order(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._op is None:
                if g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                elif node.grad is None:
                    node.grad = np.zeros_like(node.data)
                continue
            if g is not None:
                parent_grads = node._backward(g)
                for p, pg in zip(node._parents, parent_grads):
                    if pg is None or not p.requires_grad:
                        continue
                    key = id(p)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
            node._backward = None
            node._parents = ()
            node._freed = True

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _topo_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        if node._freed:
            raise GraphFreedError(
                "part of this graph was already consumed by backward(); run the forward pass again"
            )
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def _make(data, parents, backward, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._freed = False
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    else:
        out._parents = ()
        out._backward = None
        out._op = op if op is not None else "const"
    return out


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        if a.dtype != b.dtype:
            raise TypeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
        return a, b
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    if isinstance(b, Tensor):
        return as_tensor(a, b), b
    return as_tensor(a), as_tensor(b)


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise arithmetic

def add(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _pair(a, b)

    def bw(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "div")


def power(a, exponent):
    a = as_tensor(a)
    e = float(exponent)
    out = a.data ** e

    def bw(g):
        return (g * e * a.data ** (e - 1),)

    return _make(out, (a,), bw, "pow")


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def relu(a):
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Exact GELU, x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = (x * cdf).astype(x.dtype, copy=False)

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return ((g * (cdf + x * pdf)).astype(x.dtype, copy=False),)

    return _make(out, (a,), bw, "gelu")


# reductions and shape ops

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axes, keepdims), 1.0 / count)


def reshape(a, shape):
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx):
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        if _fancy(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return _make(np.array(out, copy=True), (a,), bw, "getitem")


def _fancy(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def concat(tensors, axis=0):
    tensors = list(tensors)
    dtype = tensors[0].dtype
    if any(t.dtype != dtype for t in tensors):
        raise TypeError("concat: dtype mismatch")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), bw, "concat")


def pad2d(x, pads, mode="constant"):
    """Pad the last two axes by (top, bottom, left, right)."""
    top, bottom, left, right = pads
    if not any(pads):
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    out = np.pad(x.data, width, mode=mode)
    h, w = x.shape[-2:]

    if mode == "constant":
        def bw(g):
            return (g[..., top:top + h, left:left + w],)
    else:
        def bw(g):
            return (_pad_adjoint(g, pads, h, w, mode),)

    return _make(out, (x,), bw, "pad2d")


def _pad_adjoint(g, pads, h, w, mode):
    # accumulate each padded cell back onto the source cell it copied
    top, bottom, left, right = pads
    rows = np.pad(np.arange(h), (top, bottom), mode=mode)
    cols = np.pad(np.arange(w), (left, right), mode=mode)
    tmp = np.zeros(g.shape[:-2] + (h, g.shape[-1]), dtype=g.dtype)
    for i, r in enumerate(rows):
        tmp[..., r, :] += g[..., i, :]
    out = np.zeros(g.shape[:-2] + (h, w), dtype=g.dtype)
    for j, c in enumerate(cols):
        out[..., c] += tmp[..., j]
    return out


# linear algebra

def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    _record_macs(out.size * a.shape[-1])

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def linear(x, weight, bias=None):
    """x @ weight + bias with weight stored as (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# convolutions

def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d(x, w, bias=None, stride=1, padding=0):
    """Dense 2D cross-correlation on (B, C, H, W) inputs."""
    x, w = _pair(x, w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects rank-4 input and weight, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    cout, cin, kh, kw = w.shape
    if cin != C:
        raise ValueError(f"conv2d: weight expects {cin} input channels, input has {C}")
    if kh < 1 or kw < 1 or stride < 1:
        raise ValueError("conv2d: kernel and stride must be positive")
    ho, wo = _conv_out(H, kh, stride, padding), _conv_out(W, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: non-positive output size {ho}x{wo} for input {H}x{W}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    _record_macs(B * cout * ho * wo * cin * kh * kw)

    if kh == 1 and kw == 1:
        xs = xp[:, :, ::stride, ::stride][:, :, :ho, :wo]
        cols = xs.transpose(0, 2, 3, 1).reshape(-1, C)
    elif kh == stride and kw == stride:
        xs = xp[:, :, :ho * kh, :wo * kw].reshape(B, C, ho, kh, wo, kw)
        cols = xs.transpose(0, 2, 4, 1, 3, 5).reshape(-1, C * kh * kw)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, C * kh * kw)
    wmat = w.data.reshape(cout, -1)
    out = (cols @ wmat.T).reshape(B, ho, wo, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(B, ho, wo, C, kh, kw)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            if kh == stride and kw == stride:
                blk = dcols.transpose(0, 3, 1, 4, 2, 5).reshape(B, C, ho * kh, wo * kw)
                gxp[:, :, :ho * kh, :wo * kw] = blk
            else:
                taps = np.ascontiguousarray(dcols.transpose(4, 5, 0, 3, 1, 2))
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += taps[i, j]
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, bw, "conv2d")


def depthwise_conv2d(x, w, bias=None, stride=1, padding=0):
    """Per-channel 2D cross-correlation; ``w`` has shape (C, 1, kh, kw)."""
    x, w = _pair(x, w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[1] != 1:
        raise ValueError(f"depthwise_conv2d expects (B,C,H,W) input and (C,1,kh,kw) weight, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    if w.shape[0] != C:
        raise ValueError(f"depthwise_conv2d: weight has {w.shape[0]} filters, input has {C} channels")
    kh, kw = w.shape[2:]
    if kh < 1 or kw < 1 or stride < 1:
        raise ValueError("depthwise_conv2d: kernel and stride must be positive")
    ho, wo = _conv_out(H, kh, stride, padding), _conv_out(W, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"depthwise_conv2d: non-positive output size {ho}x{wo} for input {H}x{W}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    _record_macs(B * C * ho * wo * kh * kw)
    filt = w.data[:, 0]
    blocked = kh == stride and kw == stride

    if blocked:
        xs = xp[:, :, :ho * kh, :wo * kw].reshape(B, C, ho, kh, wo, kw)
        out = np.einsum("bchiwj,cij->bchw", xs, filt, optimize=True)
    else:
        out = np.zeros((B, C, ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                sl = xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
                out += sl * filt[:, i, j].reshape(1, C, 1, 1)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)

    def bw(g):
        gw = gb = gx = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if blocked:
            if w.requires_grad:
                gw = np.einsum("bchiwj,bchw->cij", xs, g, optimize=True)[:, None]
            if x.requires_grad:
                blk = g[:, :, :, None, :, None] * filt[None, :, None, :, None, :]
                gxp = np.zeros(xp.shape, dtype=xp.dtype)
                gxp[:, :, :ho * kh, :wo * kw] = blk.reshape(B, C, ho * kh, wo * kw)
                gx = gxp
        else:
            gwf = np.zeros_like(filt) if w.requires_grad else None
            gxp = np.zeros(xp.shape, dtype=xp.dtype) if x.requires_grad else None
            for i in range(kh):
                for j in range(kw):
                    rs = slice(i, i + stride * (ho - 1) + 1, stride)
                    cs = slice(j, j + stride * (wo - 1) + 1, stride)
                    if gwf is not None:
                        gwf[:, i, j] = np.einsum("bchw,bchw->c", xp[:, :, rs, cs], g)
                    if gxp is not None:
                        gxp[:, :, rs, cs] += g * filt[:, i, j].reshape(1, C, 1, 1)
            gw = gwf[:, None] if gwf is not None else None
            gx = gxp
        if gx is not None and padding:
            gx = gx[:, :, padding:padding + H, padding:padding + W]
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, bw, "depthwise_conv2d")


# normalization

def batchnorm2d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Batch norm over (B, H, W) per channel.

    ``running_mean`` and ``running_var`` are numpy arrays updated in place
    when ``training`` is true (unbiased variance, as is customary).
    """
    x, gamma = _pair(x, gamma)
    beta = as_tensor(beta, x)
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,) or running_mean.shape != (C,):
        raise ValueError(f"batchnorm2d: expected affine/statistics of length {C}")
    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        count = x.size // C
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * count / max(count - 1, 1)
    else:
        mu, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(1, C, 1, 1)) * inv.reshape(1, C, 1, 1)
    out = xhat * gamma.data.reshape(1, C, 1, 1) + beta.data.reshape(1, C, 1, 1)

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(1, C, 1, 1)
        if training:
            m = x.size // C
            gx = (inv.reshape(1, C, 1, 1) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(1, C, 1, 1)
        return gx, gg, gbeta

    return _make(out, (x, gamma, beta), bw, "batchnorm2d")


def layernorm(x, gamma, beta, axis=-1, eps=1e-6):
    """Normalize over one axis (the channel axis) and apply an affine map."""
    x, gamma = _pair(x, gamma)
    beta = as_tensor(beta, x)
    axis = axis % x.ndim
    C = x.shape[axis]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"layernorm: expected affine of length {C}, got {gamma.shape}")
    bshape = [1] * x.ndim
    bshape[axis] = C
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gam = gamma.data.reshape(bshape)
    out = xhat * gam + beta.data.reshape(bshape)
    red = tuple(i for i in range(x.ndim) if i != axis)

    def bw(g):
        gg = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        gxhat = g * gam
        gx = inv * (
            gxhat
            - gxhat.mean(axis=axis, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=axis, keepdims=True)
        )
        return gx, gg, gb

    return _make(out, (x, gamma, beta), bw, "layernorm")


# softmax family

def softmax(x, axis=-1):
    if np.isnan(x.data).any():
        raise ValueError("softmax received NaN input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def log_softmax(x, axis=-1):
    if np.isnan(x.data).any():
        raise ValueError("log_softmax received NaN input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


# gradient checking

def finite_diff_check(f, params, eps=1e-5, max_coords=64, seed=0, floor=1e-8, rel_floor=1e-3):
    """Compare analytic gradients of ``f()`` with central differences.

    ``f`` takes no arguments and returns a scalar Tensor built from
    ``params``. At most ``max_coords`` coordinates are sampled per tensor.
    The relative error of one coordinate is
    ``|a - n| / max(|a|, |n|, s)`` with ``s = max(floor, rel_floor * g)``
    and ``g`` the largest analytic gradient magnitude in the check. The
    scale ``s`` keeps coordinates whose true gradient is zero (a key bias
    under softmax shift invariance, say) from being judged on rounding
    noise alone. The maximum over all sampled coordinates is returned.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    gmax = max((float(np.abs(g).max()) for g in analytic if g.size), default=0.0)
    scale = max(floor, rel_floor * gmax)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            n = flat.size
            idx = np.arange(n) if n <= max_coords else rng.choice(n, max_coords, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                up = float(f().data)
                flat[i] = orig - eps
                down = float(f().data)
                flat[i] = orig
                num = (up - down) / (2 * eps)
                a = float(ga.reshape(-1)[i])
                err = abs(a - num) / max(abs(a), abs(num), scale)
                worst = max(worst, err)
    return worst
