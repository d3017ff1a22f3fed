"""Reference implementations used as test oracles. Deliberately naive."""

import numpy as np


def conv2d_loops(x, w, b, stride, pad):
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (H + 2 * pad - k) // stride + 1
    wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, O, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.einsum("bckl,ockl->bo", patch, w)
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    return out


def depthwise_loops(x, w, b, stride, pad):
    C = x.shape[1]
    return np.concatenate(
        [conv2d_loops(x[:, c:c + 1], w[c:c + 1], None if b is None else b[c:c + 1], stride, pad)
         for c in range(C)],
        axis=1,
    )


def plain_attention(x, wq, bq, wk, bk, wv, bv):
    """Single-head softmax attention on a token matrix (N, C)."""
    q, k, v = x @ wq + bq, x @ wk + bk, x @ wv + bv
    s = q @ k.T / np.sqrt(q.shape[1])
    s = np.exp(s - s.max(axis=1, keepdims=True))
    s /= s.sum(axis=1, keepdims=True)
    return s @ v


def leaf(rng, *shape, scale=1.0):
    from mscvit.tensor import Tensor
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)
