"""Finite-difference gradient checks for every differentiable op and block.

All checks run in float64 with BatchNorm in eval mode. Each check builds
a scalar by projecting the op output onto fixed random weights, so every
output element contributes to the gradient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import blocks as B
from . import tensor as T
from .tensor import Tensor, finite_diff_check
from .train import cross_entropy
from .wavelet import dwt_stacked, idwt_stacked, wtconv

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    seconds: float

    @property
    def passed(self):
        return self.error < TOLERANCE


def _leaf(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def _projected(fn, rng):
    """Wrap a tensor-valued fn into a scalar objective."""
    out_shape = fn().shape
    w = rng.standard_normal(out_shape)

    def f():
        return (fn() * w).sum()

    return f


def _prepare(module, rng, scale=0.5):
    module.astype(np.float64)
    module.eval()
    for p in module.parameters():
        p.data[...] = rng.standard_normal(p.shape) * scale
    return module


def op_checks(rng):
    """(name, objective, leaves) for each primitive op."""
    checks = []

    def add(name, fn, leaves):
        checks.append((name, _projected(fn, rng), leaves))

    a, b = _leaf(rng, (3, 5)), _leaf(rng, (5, 4))
    add("matmul", lambda: T.matmul(a, b), [a, b])
    ba, bb = _leaf(rng, (2, 3, 4, 5)), _leaf(rng, (2, 3, 5, 2))
    add("batched matmul", lambda: T.matmul(ba, bb), [ba, bb])
    x, y = _leaf(rng, (2, 3, 4)), _leaf(rng, (3, 1))
    add("broadcast add/mul/sub", lambda: (x + y) * x - y, [x, y])
    d = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    add("div", lambda: x / d, [x, d])
    add("pow/exp/log/sqrt", lambda: T.log(d) + T.exp(d * 0.3) + T.sqrt(d) + d ** 3, [d])
    add("sum/mean/reshape/transpose",
        lambda: (x.sum(axis=1, keepdims=True) + x.mean(axis=(0, 1))).reshape(4, 2, 1).transpose(2, 0, 1), [x])
    add("getitem/concat", lambda: T.concat([x[:, 1:], x[:, :1] * 2.0], axis=1), [x])
    img = _leaf(rng, (2, 3, 7, 6))
    add("pad2d reflect", lambda: T.pad2d(img, (1, 2, 2, 1), mode="reflect"), [img])
    add("pad2d edge", lambda: T.pad2d(img, (0, 1, 0, 1), mode="edge"), [img])
    w = _leaf(rng, (4, 3, 3, 3), 0.5)
    bias = _leaf(rng, (4,))
    add("conv2d k3 s1 p1", lambda: T.conv2d(img, w, bias, 1, 1), [img, w, bias])
    add("conv2d k3 s2 p1", lambda: T.conv2d(img, w, bias, 2, 1), [img, w, bias])
    w2 = _leaf(rng, (4, 3, 2, 2), 0.5)
    add("conv2d k2 s2", lambda: T.conv2d(img, w2, bias, 2, 0), [img, w2, bias])
    w1 = _leaf(rng, (4, 3, 1, 1), 0.5)
    add("conv2d k1", lambda: T.conv2d(img, w1, bias, 1, 0), [img, w1, bias])
    dw = _leaf(rng, (3, 1, 3, 3), 0.5)
    db = _leaf(rng, (3,))
    add("depthwise k3 s1 p1", lambda: T.depthwise_conv2d(img, dw, db, 1, 1), [img, dw, db])
    add("depthwise k3 s2", lambda: T.depthwise_conv2d(img, dw, db, 2, 0), [img, dw, db])
    dw2 = _leaf(rng, (3, 1, 2, 2), 0.5)
    add("depthwise k2 s2 (blocked)", lambda: T.depthwise_conv2d(img, dw2, db, 2, 0), [img, dw2, db])
    gamma, beta = _leaf(rng, (3,)), _leaf(rng, (3,))
    rm, rv = np.zeros(3), np.ones(3)
    add("batchnorm2d train", lambda: T.batchnorm2d(img, gamma, beta, rm.copy(), rv.copy(), True), [img, gamma, beta])
    add("batchnorm2d eval", lambda: T.batchnorm2d(img, gamma, beta, rm, rv + 0.5, False), [img, gamma, beta])
    g4, b4 = _leaf(rng, (4,)), _leaf(rng, (4,))
    add("layernorm last axis", lambda: T.layernorm(x.reshape(2, 3, 4), g4, b4), [x, g4, b4])
    add("layernorm channel axis", lambda: T.layernorm(img, gamma, beta, axis=1), [img, gamma, beta])
    add("gelu", lambda: T.gelu(x * 2.0), [x])
    add("softmax", lambda: T.softmax(x * 2.0, axis=-1), [x])
    add("log_softmax", lambda: T.log_softmax(x, axis=1), [x])
    logits = _leaf(rng, (6, 5))
    labels = rng.integers(0, 5, 6)
    checks.append(("cross_entropy", lambda: cross_entropy(logits, labels, 0.1), [logits]))
    even = _leaf(rng, (2, 3, 6, 8))
    add("haar dwt", lambda: dwt_stacked(even), [even])
    bands = _leaf(rng, (2, 12, 3, 4))
    add("haar idwt", lambda: idwt_stacked(bands), [bands])
    bf = _leaf(rng, (12, 1, 3, 3), 0.5)
    add("wtconv", lambda: wtconv(img, bf), [img, bf])
    rf = _leaf(rng, (3, 1, 2, 2), 0.5)
    add("spatial_reduce R=2", lambda: B.spatial_reduce(img, 2, rf, db), [img, rf, db])
    q, k, v = _leaf(rng, (2, 5, 4)), _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 3, 6))
    add("attention_head", lambda: B.attention_head(q, k, v, 4), [q, k, v])
    return checks


def block_checks(rng, size=8):
    """(name, objective, leaves) for each composite block at size x size."""
    checks = []
    C = 16

    def add(name, module, in_shape):
        _prepare(module, rng)
        x = _leaf(rng, in_shape)
        checks.append((name, _projected(lambda: module(x), rng), [x] + module.parameters()))

    add("LFE", B.LFE(C, rng), (2, C, size, size))
    add("LMSSA R={2,1}", B.LMSSA(12, (2, 1), rng), (2, 12, size, size))
    add("CFF", B.CFF(C, 0.25, 3, (2, 1), rng), (2, C, size, size))
    add("FFN", B.FFN(C, 4, rng), (2, size * size, C))
    add("MSCBlock", B.MSCBlock(C, 0.25, 3, (2, 1), rng), (2, C, size, size))
    add("MSCBlock normal attention", B.MSCBlock(C, 0.25, 5, (2, 1), rng, restore=True), (2, C, size, size))
    add("ConvStem", B.ConvStem(8, rng), (2, 3, size, size))
    add("PatchEmbed", B.PatchEmbed(8, C, rng), (2, 8, size, size))
    add("ClassifierHead", B.ClassifierHead(C, 5, rng, hidden=12), (2, C, size, size))
    return checks


def run_suite(seed=0, include_ops=True, include_blocks=True, report=None):
    rng = np.random.default_rng(seed)
    checks = []
    if include_ops:
        checks += op_checks(rng)
    if include_blocks:
        checks += block_checks(rng)
    results = []
    for name, f, leaves in checks:
        t0 = time.time()
        err = finite_diff_check(f, leaves)
        res = CheckResult(name, err, time.time() - t0)
        results.append(res)
        if report:
            report(res)
    return results
