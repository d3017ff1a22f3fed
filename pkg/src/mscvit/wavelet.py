"""Single-level orthonormal 2D Haar transform and wavelet-domain convolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Module, Parameter, trunc_normal
from .tensor import Tensor


@dataclass
class WaveletBands:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        shapes = {self.ll.shape, self.lh.shape, self.hl.shape, self.hh.shape}
        if len(shapes) != 1:
            raise ValueError(f"wavelet bands disagree in shape: {sorted(shapes)}")

    @property
    def shape(self):
        return self.ll.shape


def _analysis(x):
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return (
        (a + b + c + d) * 0.5,
        (a - b + c - d) * 0.5,
        (a + b - c - d) * 0.5,
        (a - b - c + d) * 0.5,
    )


def _synthesis(ll, lh, hl, hh):
    B, C, h, w = ll.shape
    out = np.empty((B, C, 2 * h, 2 * w), dtype=ll.dtype)
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    out[..., 0::2, 1::2] = (ll - lh + hl - hh) * 0.5
    out[..., 1::2, 0::2] = (ll + lh - hl - hh) * 0.5
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return out


def _pad_even(x):
    H, W = x.shape[-2:]
    ph, pw = H % 2, W % 2
    if not (ph or pw):
        return x
    mode = "reflect" if min(H, W) > 1 else "edge"
    return T.pad2d(x, (0, ph, 0, pw), mode=mode)


def dwt_stacked(x):
    """Haar analysis of (B, C, H, W) into (B, 4C, H/2, W/2), bands ordered
    ll, lh, hl, hh. Odd extents are reflect-padded by one row/column."""
    if x.ndim != 4:
        raise ValueError(f"expected a (B, C, H, W) feature map, got {x.shape}")
    if x.shape[2] == 0 or x.shape[3] == 0:
        raise ValueError("wavelet transform of an empty spatial extent")
    x = _pad_even(x)
    B, C = x.shape[:2]
    out = np.concatenate(_analysis(x.data), axis=1)

    def bw(g):
        # orthonormal: the adjoint is the synthesis operator
        return (_synthesis(*np.split(g, 4, axis=1)),)

    return T._make(out, (x,), bw, "haar_dwt")


def idwt_stacked(s):
    """Inverse of ``dwt_stacked`` (without undoing any odd-size padding)."""
    if s.ndim != 4 or s.shape[1] % 4:
        raise ValueError(f"expected (B, 4C, h, w) stacked bands, got {s.shape}")
    out = _synthesis(*np.split(s.data, 4, axis=1))

    def bw(g):
        return (np.concatenate(_analysis(g), axis=1),)

    return T._make(out, (s,), bw, "haar_idwt")


def haar_dwt2d(x):
    s = dwt_stacked(x)
    C = x.shape[1]
    return WaveletBands(*(s[:, i * C:(i + 1) * C] for i in range(4)))


def haar_idwt2d(bands):
    if not isinstance(bands, WaveletBands):
        bands = WaveletBands(*bands)
    return idwt_stacked(T.concat([bands.ll, bands.lh, bands.hl, bands.hh], axis=1))


def wtconv(x, band_filters):
    """Filter each Haar band with its own 3x3 depthwise kernel, invert, add x.

    ``band_filters`` has shape (4C, 1, k, k); rows [0, C) act on ll and the
    following three blocks on lh, hl and hh.
    """
    B, C, H, W = x.shape
    if band_filters.shape[0] != 4 * C:
        raise ValueError(f"wtconv: {band_filters.shape[0]} band filters for {C} channels")
    k = band_filters.shape[-1]
    s = dwt_stacked(x)
    s = T.depthwise_conv2d(s, band_filters, None, 1, k // 2)
    y = idwt_stacked(s)
    if y.shape[2:] != (H, W):
        y = y[:, :, :H, :W]
    return x + y


class WTConv(Module):
    def __init__(self, channels, rng, kernel=3):
        super().__init__()
        self.channels = channels
        self.weight = Parameter(trunc_normal(rng, (4 * channels, 1, kernel, kernel)))

    def forward(self, x):
        return wtconv(x, self.weight)
