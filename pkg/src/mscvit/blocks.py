"""Building blocks of the network: local feature extraction, multi-scale
attention, convolutional feature fusion, feed-forward, stem, patch embedding
and classifier head.

Feature maps are (B, C, H, W); token sequences are (B, H*W, C).
"""

from __future__ import annotations

import math

from . import tensor as T
from .nn import (
    BatchNorm2d,
    Conv2d,
    DepthwiseConv2d,
    LayerNorm,
    Linear,
    Module,
)
from .wavelet import WTConv

ALLOWED_REDUCTIONS = (1, 2, 4, 8)


def to_tokens(x):
    B, C, H, W = x.shape
    return x.reshape(B, C, H * W).transpose(0, 2, 1)


def to_map(t, H, W):
    B, N, C = t.shape
    return t.transpose(0, 2, 1).reshape(B, C, H, W)


# local feature extraction

class LFE(Module):
    """Depthwise 3x3 -> BN -> GELU, add the input, then a per-channel 1x1."""

    def __init__(self, channels, rng):
        super().__init__()
        self.channels = channels
        self.dwconv1 = DepthwiseConv2d(channels, 3, rng, padding=1)
        self.bn = BatchNorm2d(channels)
        # the 1x1 sits on the only path that carries x forward, so it starts as identity
        self.dwconv2 = DepthwiseConv2d(channels, 1, rng, init="identity")

    def forward(self, x):
        return lfe_forward(x, self)


def lfe_forward(x, p):
    if x.shape[1] != p.channels:
        raise ValueError(f"LFE built for {p.channels} channels, got {x.shape[1]}")
    inner = T.gelu(p.bn(p.dwconv1(x)))
    return p.dwconv2(inner + x)


# multi-scale attention

def spatial_reduce(x, R, weight, bias=None):
    """Fuse each RxR patch of every channel into one token with a strided
    depthwise filter. R == 1 returns ``x`` itself."""
    if R < 1:
        raise ValueError(f"reduction factor must be >= 1, got {R}")
    if R == 1:
        return x
    H, W = x.shape[2:]
    if H < R or W < R:
        raise ValueError(f"cannot reduce a {H}x{W} map by R={R}")
    ph, pw = (-H) % R, (-W) % R
    if ph or pw:
        x = T.pad2d(x, (0, ph, 0, pw))
    return T.depthwise_conv2d(x, weight, bias, stride=R, padding=0)


def attention_head(q, k, v, d_k, return_weights=False):
    """softmax(q k^T / sqrt(d_k)) v over the trailing two axes."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key widths differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value lengths differ: {k.shape} vs {v.shape}")
    nd = k.ndim
    axes = tuple(range(nd - 2)) + (nd - 1, nd - 2)
    scores = T.matmul(q, k.transpose(axes)) * (1.0 / math.sqrt(d_k))
    weights = T.softmax(scores, axis=-1)
    out = T.matmul(weights, v)
    return (out, weights) if return_weights else out


def split_channels(total, reductions):
    """Even split of ``total`` channels over groups; the remainder goes to
    the R=1 group, or to the last group when there is none."""
    n = len(reductions)
    base = total // n
    if base < 1:
        raise ValueError(f"{total} attention channels cannot feed {n} head groups")
    parts = [base] * n
    rest = total - base * n
    target = reductions.index(1) if 1 in reductions else n - 1
    parts[target] += rest
    return parts


class AttentionHeadGroup(Module):
    """Heads sharing one reduction factor.

    Queries, keys and values are projected from the whole attention input
    (width ``d_in``) onto this group's ``width`` channels; keys and values
    are then reduced spatially by ``reduction``.
    """

    def __init__(self, d_in, width, reduction, rng, head_dim=32, restore=False):
        super().__init__()
        if reduction not in ALLOWED_REDUCTIONS:
            raise ValueError(f"reduction factor must be one of {ALLOWED_REDUCTIONS}, got {reduction}")
        self.width = width
        self.reduction = reduction
        self.heads = width // head_dim if width % head_dim == 0 else 1
        self.head_dim = width // self.heads
        self.q = Linear(d_in, width, rng)
        self.k = Linear(d_in, width, rng)
        self.v = Linear(d_in, width, rng)
        if reduction > 1:
            self.reduce_k = DepthwiseConv2d(width, reduction, rng, stride=reduction)
            self.reduce_v = DepthwiseConv2d(width, reduction, rng, stride=reduction)
        else:
            self.reduce_k = self.reduce_v = None
        if restore:
            self.restore_q = Linear(width, width, rng)
            self.restore_k = Linear(width, width, rng)
            self.restore_v = Linear(width, width, rng)
        self.restore = restore

    def kv_tokens(self, H, W):
        R = self.reduction
        return math.ceil(H / R) * math.ceil(W / R)

    def forward(self, tokens, H, W, return_weights=False):
        B, N, _ = tokens.shape
        q, k, v = self.q(tokens), self.k(tokens), self.v(tokens)
        if self.reduction > 1:
            R = self.reduction
            k = to_tokens(spatial_reduce(to_map(k, H, W), R, self.reduce_k.weight, self.reduce_k.bias))
            v = to_tokens(spatial_reduce(to_map(v, H, W), R, self.reduce_v.weight, self.reduce_v.bias))
        if self.restore:
            q, k, v = self.restore_q(q), self.restore_k(k), self.restore_v(v)
        h, d = self.heads, self.head_dim
        m = k.shape[1]
        q = q.reshape(B, N, h, d).transpose(0, 2, 1, 3)
        k = k.reshape(B, m, h, d).transpose(0, 2, 1, 3)
        v = v.reshape(B, m, h, d).transpose(0, 2, 1, 3)
        out = attention_head(q, k, v, d, return_weights)
        if return_weights:
            out, weights = out
        out = out.transpose(0, 2, 1, 3).reshape(B, N, self.width)
        return (out, weights) if return_weights else out


class LMSSA(Module):
    """Multi-scale attention: head groups with different K/V reductions,
    concatenated and closed by an output projection."""

    def __init__(self, channels, reductions, rng, head_dim=32, restore=False):
        super().__init__()
        self.channels = channels
        self.reductions = tuple(reductions)
        widths = split_channels(channels, list(reductions))
        self.groups = [
            AttentionHeadGroup(channels, w, R, rng, head_dim, restore)
            for w, R in zip(widths, reductions)
        ]
        self.proj = Linear(channels, channels, rng)

    def forward(self, x):
        return lmssa_forward(x, self)


def lmssa_forward(x, p, return_weights=False):
    B, C, H, W = x.shape
    if C != sum(g.width for g in p.groups) or C != p.channels:
        raise ValueError(f"head groups cover {sum(g.width for g in p.groups)} channels, input has {C}")
    for g in p.groups:
        if g.reduction > min(H, W):
            raise ValueError(f"reduction {g.reduction} exceeds the {H}x{W} map")
    with T.mac_scope("attention"):
        tokens = to_tokens(x)
        outs, weights = [], []
        for g in p.groups:
            o = g(tokens, H, W, return_weights)
            if return_weights:
                o, w = o
                weights.append(w)
            outs.append(o)
        y = T.concat(outs, axis=-1) if len(outs) > 1 else outs[0]
        y = to_map(p.proj(y), H, W)
    return (y, weights) if return_weights else y


# convolutional feature fusion

def conv_channels(channels, split):
    c = int(round(split * channels))
    if c < 1 or c > channels - 1:
        raise ValueError(f"split {split} of {channels} channels leaves an empty path")
    return c


class CFF(Module):
    """Route the first channels through wavelet + spatial convolution and
    the rest through multi-scale attention, then concatenate."""

    def __init__(self, channels, split, kernel, reductions, rng, head_dim=32,
                 restore=False, conv_path=True):
        super().__init__()
        self.channels = channels
        self.conv_width = conv_channels(channels, split) if conv_path else 0
        c = self.conv_width
        if c:
            self.wt = WTConv(c, rng)
            self.conv = Conv2d(c, c, kernel, rng, padding=(kernel - 1) // 2)
            self.norm = LayerNorm(c, axis=1)
        self.attention = LMSSA(channels - c, reductions, rng, head_dim, restore)

    def forward(self, x):
        return cff_forward(x, self)


def cff_forward(x, p, attn=None):
    if x.shape[1] != p.channels:
        raise ValueError(f"CFF built for {p.channels} channels, got {x.shape[1]}")
    attn = attn or p.attention
    c = p.conv_width
    if not c:
        return attn(x)
    xc, xa = x[:, :c], x[:, c:]
    conv_out = T.gelu(p.norm(p.conv(p.wt(xc))))
    return T.concat([conv_out, attn(xa)], axis=1)


# feed-forward

class FFN(Module):
    def __init__(self, channels, ratio, rng):
        super().__init__()
        self.fc1 = Linear(channels, channels * ratio, rng)
        self.fc2 = Linear(channels * ratio, channels, rng)

    def forward(self, x):
        return ffn_forward(x, self)


def ffn_forward(x, p):
    return p.fc2(T.gelu(p.fc1(x)))


# the block

class MSCBlock(Module):
    def __init__(self, channels, split, kernel, reductions, rng, ffn_ratio=4,
                 head_dim=32, restore=False, lfe=True, conv_path=True):
        super().__init__()
        self.lfe = LFE(channels, rng) if lfe else None
        self.norm1 = LayerNorm(channels, axis=1)
        self.cff = CFF(channels, split, kernel, reductions, rng, head_dim, restore, conv_path)
        self.norm2 = LayerNorm(channels, axis=1)
        self.ffn = FFN(channels, ffn_ratio, rng)

    def forward(self, x):
        return msc_block_forward(x, self)


def msc_block_forward(x, p):
    # LFE already carries its own skip connection (its input is added
    # before the final 1x1), so it is applied as a map, not a residual branch
    H, W = x.shape[2:]
    x1 = p.lfe(x) if p.lfe is not None else x
    x2 = x1 + p.cff(p.norm1(x1))
    ff = to_map(p.ffn(to_tokens(p.norm2(x2))), H, W)
    return x2 + ff


# stem, patch embedding, head

class ConvStem(Module):
    def __init__(self, width, rng, in_channels=3):
        super().__init__()
        self.width = width
        self.conv1 = Conv2d(in_channels, width, 3, rng, stride=2, padding=1)
        self.bn1 = BatchNorm2d(width)
        self.conv2 = Conv2d(width, width, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(width)
        self.conv3 = Conv2d(width, width, 3, rng, padding=1)
        self.bn3 = BatchNorm2d(width)

    def forward(self, x):
        return conv_stem_forward(x, self)


def conv_stem_forward(image, p):
    if image.ndim != 4 or image.shape[1] != 3:
        raise ValueError(f"stem expects (B, 3, H, W) images, got {image.shape}")
    if min(image.shape[2:]) < 2:
        raise ValueError("stem needs at least a 2x2 image")
    x = T.gelu(p.bn1(p.conv1(image)))
    x = T.gelu(p.bn2(p.conv2(x)))
    return T.gelu(p.bn3(p.conv3(x)))


class PatchEmbed(Module):
    def __init__(self, c_in, c_out, rng, patch=2):
        super().__init__()
        self.patch = patch
        self.proj = Conv2d(c_in, c_out, patch, rng, stride=patch)
        self.norm = LayerNorm(c_out, axis=1)

    def forward(self, x):
        return patch_embed_forward(x, self)


def patch_embed_forward(x, p):
    H, W = x.shape[2:]
    if H < p.patch or W < p.patch:
        raise ValueError(f"{H}x{W} map is smaller than the {p.patch}x{p.patch} patch")
    if H % p.patch or W % p.patch:
        raise ValueError(f"{H}x{W} map is not divisible into {p.patch}x{p.patch} patches")
    return p.norm(p.proj(x))


class ClassifierHead(Module):
    """Global average pool, layer norm, optional hidden layer, linear."""

    def __init__(self, channels, num_classes, rng, hidden=0):
        super().__init__()
        self.norm = LayerNorm(channels)
        self.hidden = Linear(channels, hidden, rng) if hidden else None
        self.fc = Linear(hidden or channels, num_classes, rng)

    def forward(self, x):
        return classifier_head(x, self)


def global_pool(x):
    return x.mean(axis=(2, 3))


def classifier_head(x, p):
    z = p.norm(global_pool(x))
    if p.hidden is not None:
        z = T.gelu(p.hidden(z))
    return p.fc(z)


def attention_weights(x, p):
    """Per-group attention matrices of an LMSSA module for inspection."""
    return lmssa_forward(x, p, return_weights=True)[1]


__all__ = [
    "AttentionHeadGroup", "CFF", "ClassifierHead", "ConvStem", "FFN", "LFE",
    "LMSSA", "MSCBlock", "PatchEmbed", "attention_head", "attention_weights",
    "cff_forward", "classifier_head", "conv_channels", "conv_stem_forward",
    "ffn_forward", "global_pool", "lfe_forward", "lmssa_forward",
    "msc_block_forward", "patch_embed_forward", "spatial_reduce",
    "split_channels", "to_map", "to_tokens",
]
