"""Module containers and the parametrized layers the model is built from."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def trunc_normal(rng, shape, std=0.02, dtype=np.float32):
    """Normal samples clipped to two standard deviations by resampling."""
    out = rng.standard_normal(shape, dtype=np.float32)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()), dtype=np.float32)
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


class Module:
    """Base class: attributes that are Parameters, Modules or lists of
    Modules are discovered automatically, in assignment order."""

    def __init__(self):
        self.training = True
        self._buffers = {}

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        unexpected = set(state) - set(own) - set(bufs)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(unexpected)[:5]}")
        for name, target in list(own.items()) + list(bufs.items()):
            arr = state[name]
            data = target.data if isinstance(target, Tensor) else target
            if arr.shape != data.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape}, model {data.shape}")
            data[...] = arr

    def astype(self, dtype):
        """Cast every parameter and buffer in place (used for f64 checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            for k, b in m._buffers.items():
                m._buffers[k] = b.astype(dtype)
        return self


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        super().__init__()
        self.weight = Parameter(trunc_normal(rng, (d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out, np.float32)) if bias else None

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, bias=True):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = Parameter(trunc_normal(rng, (c_out, c_in, kernel, kernel)))
        self.bias = Parameter(np.zeros(c_out, np.float32)) if bias else None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class DepthwiseConv2d(Module):
    def __init__(self, channels, kernel, rng, stride=1, padding=0, bias=True, init="normal"):
        super().__init__()
        self.stride, self.padding = stride, padding
        if init == "identity":
            w = np.zeros((channels, 1, kernel, kernel), np.float32)
            w[:, 0, kernel // 2, kernel // 2] = 1.0
        else:
            w = trunc_normal(rng, (channels, 1, kernel, kernel))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(channels, np.float32)) if bias else None

    def forward(self, x):
        return T.depthwise_conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.ones(channels, np.float32))
        self.bias = Parameter(np.zeros(channels, np.float32))
        self._buffers["running_mean"] = np.zeros(channels, np.float32)
        self._buffers["running_var"] = np.ones(channels, np.float32)

    def forward(self, x):
        return T.batchnorm2d(
            x, self.weight, self.bias,
            self._buffers["running_mean"], self._buffers["running_var"],
            self.training, self.momentum, self.eps,
        )


class LayerNorm(Module):
    def __init__(self, channels, axis=-1, eps=1e-6):
        super().__init__()
        self.axis, self.eps = axis, eps
        self.weight = Parameter(np.ones(channels, np.float32))
        self.bias = Parameter(np.zeros(channels, np.float32))

    def forward(self, x):
        return T.layernorm(x, self.weight, self.bias, self.axis, self.eps)


def count_parameters(module):
    return sum(p.size for p in module.parameters())
