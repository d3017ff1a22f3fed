"""Model configurations, network assembly, parameter counting and the
analytic cost model."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .blocks import ClassifierHead, ConvStem, MSCBlock, PatchEmbed, split_channels
from .nn import Module, Parameter, count_parameters, trunc_normal
from .tensor import Tensor

SUPPORTED_RESOLUTIONS = (224, 32)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StageConfig:
    dim: int
    depth: int
    reductions: tuple
    kernel: int = 3
    padding: int = 1
    split: float = 0.25
    ffn_ratio: int = 4
    head_dim: int = 32


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    stem_width: int
    stages: tuple
    resolution: int = 224
    num_classes: int = 1000
    head_hidden: int = 1280
    attention: str = "lightweight"
    use_pe: bool = False
    lfe: bool = True
    cff: bool = True

    @property
    def dims(self):
        return tuple(s.dim for s in self.stages)

    @property
    def depths(self):
        return [s.depth for s in self.stages]

    @property
    def native(self):
        return self.resolution == 32

    def stage_resolutions(self):
        r = self.resolution // 2
        out = []
        for i in range(len(self.stages)):
            if i > 0 or not self.native:
                r //= 2
            out.append(r)
        return tuple(out)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def replace_stage(self, index, **kw):
        stages = list(self.stages)
        stages[index] = dataclasses.replace(stages[index], **kw)
        return dataclasses.replace(self, stages=tuple(stages))


REDUCTIONS_224 = ((8, 4), (4, 2, 1), (2, 1), (1,))
REDUCTIONS_32 = ((4, 2), (2, 1, 1), (1, 1), (1,))
DEFAULT_KERNELS = (3, 3, 5, 5)
# conv-path share of each stage, falling with depth as attention takes over
DEFAULT_SPLITS = (0.75, 0.625, 0.625, 0.125)

KERNEL_SCHEDULES = {
    "3": (3, 3, 3, 3),
    "5": (5, 5, 5, 5),
    "3/5": (3, 3, 5, 5),
    "5/3": (5, 5, 3, 3),
}

_VARIANTS = {
    "t": (16, (32, 64, 128, 256), (1, 2, 4, 1)),
    "xs": (24, (48, 96, 192, 384), (1, 1, 3, 2)),
    "s": (32, (64, 128, 256, 512), (2, 2, 4, 2)),
}
VARIANTS = tuple(_VARIANTS)


def variant_config(name, resolution=224, num_classes=1000, **overrides):
    """Configuration of one of the named variants ("t", "xs", "s")."""
    key = name.lower().removeprefix("mscvit-")
    if key not in _VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose one of {', '.join(VARIANTS)}")
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise ConfigError(f"unsupported resolution {resolution}; choose 224 or 32")
    stem, dims, depths = _VARIANTS[key]
    reds = REDUCTIONS_32 if resolution == 32 else REDUCTIONS_224
    stages = tuple(
        StageConfig(dim=d, depth=n, reductions=r, kernel=k, padding=(k - 1) // 2, split=s)
        for d, n, r, k, s in zip(dims, depths, reds, DEFAULT_KERNELS, DEFAULT_SPLITS)
    )
    cfg = ModelConfig(variant=key, stem_width=stem, stages=stages,
                      resolution=resolution, num_classes=num_classes)
    return cfg.replace(**overrides) if overrides else cfg


def validate_config(cfg):
    if cfg.resolution not in SUPPORTED_RESOLUTIONS:
        raise ConfigError(f"unsupported resolution {cfg.resolution}")
    if cfg.attention not in ("lightweight", "normal"):
        raise ConfigError(f"attention must be 'lightweight' or 'normal', got {cfg.attention!r}")
    if cfg.num_classes < 1 or cfg.stem_width < 1 or cfg.head_hidden < 0:
        raise ConfigError("num_classes and stem_width must be positive, head_hidden non-negative")
    if len(cfg.stages) != 4:
        raise ConfigError(f"expected 4 stages, got {len(cfg.stages)}")
    for i, (s, r) in enumerate(zip(cfg.stages, cfg.stage_resolutions()), start=1):
        if s.dim < 2 or s.depth < 1:
            raise ConfigError(f"stage{i}: dim must be >= 2 and depth >= 1")
        if s.kernel < 1 or s.kernel % 2 == 0:
            raise ConfigError(f"stage{i}: kernel must be a positive odd integer, got {s.kernel}")
        if s.padding != (s.kernel - 1) // 2:
            raise ConfigError(f"stage{i}: padding {s.padding} does not preserve size for kernel {s.kernel}")
        if r < 1:
            raise ConfigError(f"stage{i}: resolution collapses to zero")
        for R in s.reductions:
            if R not in (1, 2, 4, 8):
                raise ConfigError(f"stage{i}: reduction {R} not in {{1,2,4,8}}")
            if R > r:
                raise ConfigError(f"stage{i}: reduction {R} exceeds the {r}x{r} map")
        if not s.reductions:
            raise ConfigError(f"stage{i}: needs at least one head group")
        attn = s.dim
        if cfg.cff:
            c = int(round(s.split * s.dim))
            if not 1 <= c <= s.dim - 1:
                raise ConfigError(f"stage{i}: split {s.split} leaves an empty path")
            attn -= c
        if attn < len(s.reductions):
            raise ConfigError(f"stage{i}: {attn} attention channels for {len(s.reductions)} groups")
    return cfg


class Stage(Module):
    def __init__(self, c_in, stage, res, rng, patch, model_cfg):
        super().__init__()
        self.embed = PatchEmbed(c_in, stage.dim, rng, patch=patch)
        self.pos = Parameter(trunc_normal(rng, (1, stage.dim, res, res))) if model_cfg.use_pe else None
        self.blocks = [
            MSCBlock(
                stage.dim, stage.split, stage.kernel, stage.reductions, rng,
                ffn_ratio=stage.ffn_ratio, head_dim=stage.head_dim,
                restore=model_cfg.attention == "normal",
                lfe=model_cfg.lfe, conv_path=model_cfg.cff,
            )
            for _ in range(stage.depth)
        ]

    def forward(self, x):
        x = self.embed(x)
        if self.pos is not None:
            x = x + self.pos
        for blk in self.blocks:
            x = blk(x)
        return x


class MSCViT(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.config = cfg
        self.stem = ConvStem(cfg.stem_width, rng)
        c_in = cfg.stem_width
        self.stages = []
        for i, (s, r) in enumerate(zip(cfg.stages, cfg.stage_resolutions())):
            patch = 1 if (i == 0 and cfg.native) else 2
            self.stages.append(Stage(c_in, s, r, rng, patch, cfg))
            c_in = s.dim
        self.head = ClassifierHead(c_in, cfg.num_classes, rng, hidden=cfg.head_hidden)

    @property
    def stage_dims(self):
        return self.config.dims

    @property
    def depths(self):
        return self.config.depths

    def features(self, x):
        x = self.stem(x)
        for st in self.stages:
            x = st(x)
        return x

    def forward(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) images, got {x.shape}")
        H, W = x.shape[2:]
        if H != W or H != self.config.resolution:
            raise ValueError(
                f"model built for {self.config.resolution}x{self.config.resolution} inputs, got {H}x{W}"
            )
        return self.head(self.features(x))


def build_model(cfg, seed=0):
    """Assemble a network with deterministic initialization from ``seed``."""
    validate_config(cfg)
    return MSCViT(cfg, np.random.default_rng(seed))


def forward(model, batch):
    return model(batch)


def count_params(model):
    return count_parameters(model)


def param_breakdown(model):
    """Parameter count per top-level component (stem, stage1..4, head)."""
    out = {"stem": count_parameters(model.stem)}
    for i, st in enumerate(model.stages, start=1):
        out[f"stage{i}"] = count_parameters(st)
    out["head"] = count_parameters(model.head)
    return out


# analytic cost formulas

def complexity_mhsa(n, d):
    return 4 * n * d * d + 2 * n * n * d


def complexity_ffn(n, d):
    return 8 * n * d * d


def complexity_lmssa(n, d, reductions, shares=None):
    """Cost of multi-scale attention with per-group channel shares.

    ``shares`` defaults to the even split used by the model and must sum
    to ``d``. Returns an int whenever the value is integral.
    """
    reductions = list(reductions)
    if not reductions:
        raise ValueError("complexity_lmssa needs at least one reduction factor")
    if any(R < 1 for R in reductions):
        raise ValueError("reduction factors must be >= 1")
    if shares is None:
        shares = split_channels(d, reductions) if d >= len(reductions) else [Fraction(d, len(reductions))] * len(reductions)
    if sum(shares) != d:
        raise ValueError("channel shares must sum to d")
    total = Fraction(4 * n * d * d)
    for di, R in zip(shares, reductions):
        total += Fraction(2 * n * n * di, R * R)
    return int(total) if total.denominator == 1 else float(total)


@dataclass
class LayerCost:
    stage: int
    block: int
    tokens: int
    channels: int
    attention_channels: int
    reductions: tuple
    mhsa: int
    ffn: int
    lmssa: float
    attention_macs: int
    block_macs: int


@dataclass
class ComplexityReport:
    resolution: int
    layers: list = field(default_factory=list)
    stem_macs: int = 0
    embed_macs: list = field(default_factory=list)
    head_macs: int = 0
    params: int = 0

    @property
    def block_macs(self):
        return sum(l.block_macs for l in self.layers)

    @property
    def attention_macs(self):
        return sum(l.attention_macs for l in self.layers)

    @property
    def lmssa_total(self):
        return sum(l.lmssa for l in self.layers)

    @property
    def mhsa_total(self):
        return sum(l.mhsa for l in self.layers)

    @property
    def ffn_total(self):
        return sum(l.ffn for l in self.layers)

    @property
    def total_macs(self):
        return self.stem_macs + sum(self.embed_macs) + self.block_macs + self.head_macs

    @property
    def flops(self):
        return self.total_macs

    @property
    def gflops(self):
        return self.total_macs / 1e9

    def stage_macs(self, stage):
        blocks = sum(l.block_macs for l in self.layers if l.stage == stage)
        return blocks + self.embed_macs[stage - 1]

    def stage_attention(self, stage):
        return sum(l.attention_macs for l in self.layers if l.stage == stage)

    def stage_lmssa(self, stage):
        return sum(l.lmssa for l in self.layers if l.stage == stage)

    def stage_mhsa(self, stage):
        return sum(l.mhsa for l in self.layers if l.stage == stage)


def _dense_macs(conv, H, W):
    cout, cin, k, _ = conv.weight.shape
    ho = (H + 2 * conv.padding - k) // conv.stride + 1
    wo = (W + 2 * conv.padding - k) // conv.stride + 1
    return cout * ho * wo * cin * k * k, ho, wo


def _depthwise_macs(conv, H, W):
    c, _, k, _ = conv.weight.shape
    ho = (H + 2 * conv.padding - k) // conv.stride + 1
    wo = (W + 2 * conv.padding - k) // conv.stride + 1
    return c * ho * wo * k * k


def _linear_macs(lin, tokens):
    return tokens * lin.weight.shape[0] * lin.weight.shape[1]


def lmssa_macs(attn, H, W):
    n = H * W
    total = _linear_macs(attn.proj, n)
    for g in attn.groups:
        total += _linear_macs(g.q, n) + _linear_macs(g.k, n) + _linear_macs(g.v, n)
        R = g.reduction
        hr, wr = math.ceil(H / R), math.ceil(W / R)
        m = hr * wr
        if R > 1:
            total += 2 * g.width * m * R * R
        if g.restore:
            total += _linear_macs(g.restore_q, n) + 2 * _linear_macs(g.restore_k, m)
        total += 2 * n * m * g.width
    return total


def _cff_conv_macs(cff, H, W):
    c = cff.conv_width
    if not c:
        return 0
    hh, ww = (H + 1) // 2, (W + 1) // 2
    total = 4 * c * hh * ww * cff.wt.weight.shape[-1] ** 2
    total += _dense_macs(cff.conv, H, W)[0]
    return total


def _block_macs(blk, H, W):
    n = H * W
    total = 0
    if blk.lfe is not None:
        total += _depthwise_macs(blk.lfe.dwconv1, H, W) + _depthwise_macs(blk.lfe.dwconv2, H, W)
    total += _cff_conv_macs(blk.cff, H, W)
    attn = lmssa_macs(blk.cff.attention, H, W)
    total += attn
    total += _linear_macs(blk.ffn.fc1, n) + _linear_macs(blk.ffn.fc2, n)
    return total, attn


def estimate_flops(model, resolution=None):
    """Analytic multiply-accumulate count of one forward pass (batch 1).

    Convolutions, projections, attention products and the FFN are counted;
    normalization, activations, softmax and residual adds are not. One
    multiply-accumulate counts as one FLOP.
    """
    if isinstance(model, ModelConfig):
        model = build_model(model)
    cfg = model.config
    res = resolution or cfg.resolution
    if res not in SUPPORTED_RESOLUTIONS:
        raise ConfigError(f"unsupported resolution {res}")
    if res != cfg.resolution:
        raise ConfigError(f"model was configured for {cfg.resolution}, not {res}")
    report = ComplexityReport(resolution=res, params=count_params(model))
    stem = model.stem
    m1, H, W = _dense_macs(stem.conv1, res, res)
    m2, H, W = _dense_macs(stem.conv2, H, W)
    m3, H, W = _dense_macs(stem.conv3, H, W)
    report.stem_macs = m1 + m2 + m3
    for si, st in enumerate(model.stages, start=1):
        me, H, W = _dense_macs(st.embed.proj, H, W)
        report.embed_macs.append(me)
        n = H * W
        for bi, blk in enumerate(st.blocks, start=1):
            bm, am = _block_macs(blk, H, W)
            attn = blk.cff.attention
            report.layers.append(LayerCost(
                stage=si, block=bi, tokens=n, channels=cfg.stages[si - 1].dim,
                attention_channels=attn.channels, reductions=attn.reductions,
                mhsa=complexity_mhsa(n, attn.channels),
                ffn=complexity_ffn(n, cfg.stages[si - 1].dim),
                lmssa=complexity_lmssa(n, attn.channels, attn.reductions,
                                       [g.width for g in attn.groups]),
                attention_macs=am, block_macs=bm,
            ))
    head = model.head
    report.head_macs = sum(_linear_macs(l, 1) for l in (head.hidden, head.fc) if l is not None)
    return report


def measure_macs(model, batch=1):
    """Run one forward pass and return the MACs recorded by the ops,
    split into attention and the rest."""
    res = model.config.resolution
    x = Tensor(np.zeros((batch, 3, res, res), np.float32))
    was_training = model.training
    model.eval()
    try:
        with T.no_grad(), T.count_macs() as counts:
            model(x)
    finally:
        model.train(was_training)
    attention = sum(v for k, v in counts.items() if "attention" in k.split("/"))
    return {"total": sum(counts.values()) // batch, "attention": attention // batch}


# flat key = value configuration files

_GLOBAL_KEYS = {
    "variant": str, "resolution": int, "num_classes": int, "head_hidden": int,
    "attention": str, "use_pe": bool, "lfe": bool, "cff": bool, "stem_width": int,
    "kernel_schedule": str,
}
_STAGE_KEYS = {
    "dim": ("dim", int), "depth": ("depth", int), "R": ("reductions", tuple),
    "Ck": ("kernel", int), "P": ("padding", int), "split": ("split", float),
    "ffn_ratio": ("ffn_ratio", int), "head_dim": ("head_dim", int),
}

CONFIG_SCHEMA = """\
# one "key = value" per line; '#' starts a comment
variant          t | xs | s            (applied first; other keys override it)
resolution       224 | 32
num_classes      positive integer
head_hidden      width of the hidden head layer, 0 for a single linear layer
attention        lightweight | normal
use_pe           on | off              learnable positional embedding per stage
lfe              on | off
cff              on | off              off routes every channel to attention
stem_width       positive integer
kernel_schedule  3 | 5 | 3/5 | 5/3     fusion kernel for stages 1-2 / 3-4
stageN.dim       channels of stage N (N = 1..4)
stageN.depth     blocks in stage N
stageN.R         comma-separated reductions, e.g. 8,4
stageN.Ck        fusion kernel size; stageN.P follows unless given
stageN.P         fusion padding, must equal (Ck - 1) / 2
stageN.split     conv-path channel share in (0, 1)
stageN.ffn_ratio FFN expansion ratio
stageN.head_dim  attention head width
"""


def _parse_value(kind, raw, key):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("on", "true", "1", "yes"):
                return True
            if low in ("off", "false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def apply_overrides(cfg, overrides):
    """Apply ``{key: text value}`` pairs to a config; unknown keys raise."""
    overrides = dict(overrides)
    if "variant" in overrides or "resolution" in overrides:
        variant = overrides.pop("variant", cfg.variant)
        res = _parse_value(int, overrides.pop("resolution", str(cfg.resolution)), "resolution")
        base = variant_config(variant, res, cfg.num_classes)
        cfg = base.replace(head_hidden=cfg.head_hidden, attention=cfg.attention,
                           use_pe=cfg.use_pe, lfe=cfg.lfe, cff=cfg.cff)
    explicit_pad = set()
    kernel_set = set()
    for key, raw in overrides.items():
        if key in _GLOBAL_KEYS:
            val = _parse_value(_GLOBAL_KEYS[key], raw, key)
            if key == "kernel_schedule":
                if val not in KERNEL_SCHEDULES:
                    raise ConfigError(f"kernel_schedule must be one of {', '.join(KERNEL_SCHEDULES)}")
                for i, k in enumerate(KERNEL_SCHEDULES[val]):
                    cfg = cfg.replace_stage(i, kernel=k, padding=(k - 1) // 2)
                    kernel_set.add(i)
            else:
                cfg = cfg.replace(**{key: val})
            continue
        stage, dot, attr = key.partition(".")
        if dot and stage.startswith("stage") and stage[5:].isdigit() and attr in _STAGE_KEYS:
            idx = int(stage[5:]) - 1
            if not 0 <= idx < len(cfg.stages):
                raise ConfigError(f"no stage {idx + 1}")
            name, kind = _STAGE_KEYS[attr]
            cfg = cfg.replace_stage(idx, **{name: _parse_value(kind, raw, key)})
            if name == "padding":
                explicit_pad.add(idx)
            if name == "kernel":
                kernel_set.add(idx)
            continue
        raise ConfigError(f"unknown config key {key!r}")
    for idx in kernel_set - explicit_pad:
        k = cfg.stages[idx].kernel
        cfg = cfg.replace_stage(idx, padding=(k - 1) // 2)
    return validate_config(cfg)


def parse_config_text(text, base=None):
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        pairs[key.strip()] = value.strip()
    cfg = base or variant_config(pairs.get("variant", "t"))
    return apply_overrides(cfg, pairs)


def load_config(path, base=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)


def config_to_text(cfg):
    onoff = {True: "on", False: "off"}
    lines = [
        f"variant = {cfg.variant}",
        f"resolution = {cfg.resolution}",
        f"num_classes = {cfg.num_classes}",
        f"head_hidden = {cfg.head_hidden}",
        f"attention = {cfg.attention}",
        f"use_pe = {onoff[cfg.use_pe]}",
        f"lfe = {onoff[cfg.lfe]}",
        f"cff = {onoff[cfg.cff]}",
        f"stem_width = {cfg.stem_width}",
    ]
    for i, s in enumerate(cfg.stages, start=1):
        lines += [
            f"stage{i}.dim = {s.dim}",
            f"stage{i}.depth = {s.depth}",
            f"stage{i}.R = {','.join(str(r) for r in s.reductions)}",
            f"stage{i}.Ck = {s.kernel}",
            f"stage{i}.P = {s.padding}",
            f"stage{i}.split = {s.split!r}",
            f"stage{i}.ffn_ratio = {s.ffn_ratio}",
            f"stage{i}.head_dim = {s.head_dim}",
        ]
    return "\n".join(lines) + "\n"


__all__ = [
    "ComplexityReport", "ConfigError", "LayerCost", "MSCViT", "ModelConfig",
    "StageConfig", "apply_overrides", "build_model", "complexity_ffn",
    "complexity_lmssa", "complexity_mhsa", "config_to_text", "count_params",
    "estimate_flops", "forward", "load_config", "measure_macs",
    "param_breakdown", "parse_config_text", "validate_config", "variant_config",
]
