"""Four-level U-Net restoration network built from dual transformer blocks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import functional as F
from .attention import AttentionConfig
from .channel import ChannelAwareAttention
from .errors import ConfigError, DimensionError
from .nn import Conv2d, LayerNorm2d, Module
from .tensor import Tensor

ATTENTION_MODES = ("na_only", "dina_only", "alternating")
DEFAULT_DILATIONS = (36, 18, 9, 4)


@dataclass(frozen=True)
class StageSpec:
    blocks: int
    channels: int
    heads: int
    dilation_pair: tuple[int, int] = (1, 1)

    def __post_init__(self):
        object.__setattr__(self, "dilation_pair", tuple(self.dilation_pair))
        if self.blocks < 1:
            raise ConfigError("a stage needs at least one block")
        if self.heads < 1 or self.channels % self.heads:
            raise ConfigError(f"stage channels {self.channels} not divisible by heads {self.heads}")
        if self.dilation_pair[0] != 1 or self.dilation_pair[1] < 1:
            raise ConfigError(f"dilation pair must be (1, d>=1), got {self.dilation_pair}")


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 48
    stages: tuple[StageSpec, ...] = ()
    in_channels: int = 3
    out_channels: int = 3
    refinement_blocks: int = 4
    gdfn_expansion: float = 2.66
    attention_mode: str = "alternating"
    cam_enabled: bool = True
    k: int = 7
    auto_clamp: bool = True

    def __post_init__(self):
        stages = tuple(s if isinstance(s, StageSpec) else StageSpec(**s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        if len(stages) != 4:
            raise ConfigError(f"expected 4 stages, got {len(stages)}")
        if self.base_channels < 2 or self.base_channels % 2:
            raise ConfigError("base_channels must be even (downsampling halves channels before unshuffle)")
        for i, s in enumerate(stages):
            if s.channels != self.base_channels * 2 ** i:
                raise ConfigError(f"stage {i + 1} has {s.channels} channels, expected {self.base_channels * 2 ** i}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"k must be odd and >= 1, got {self.k}")
        if self.in_channels not in (self.out_channels, 2 * self.out_channels):
            raise ConfigError("in_channels must equal out_channels (single input) or twice it (dual input)")
        if self.refinement_blocks < 0 or self.gdfn_expansion <= 0:
            raise ConfigError("refinement_blocks must be >= 0 and gdfn_expansion > 0")
        b = 2 * self.base_channels
        if b % stages[0].heads:
            raise ConfigError(f"level-1 decoder width {b} not divisible by heads {stages[0].heads}")

    @classmethod
    def make(cls, base: int, blocks=(4, 6, 6, 8), heads=(1, 2, 4, 8),
             dilations=DEFAULT_DILATIONS, **kw) -> "ModelConfig":
        stages = tuple(StageSpec(n, base * 2 ** i, h, (1, d))
                       for i, (n, h, d) in enumerate(zip(blocks, heads, dilations)))
        return cls(base_channels=base, stages=stages, **kw)

    @classmethod
    def full(cls, **kw) -> "ModelConfig":
        """Restormer-sized reference configuration."""
        return cls.make(48, **kw)

    @classmethod
    def ablation(cls, **kw) -> "ModelConfig":
        """16-channel width used for the attention/CAM ablation."""
        return cls.make(16, **kw)

    @classmethod
    def micro(cls, **kw) -> "ModelConfig":
        kw.setdefault("refinement_blocks", 1)
        kw.setdefault("k", 3)
        kw.setdefault("blocks", (1, 1, 1, 1))
        return cls.make(kw.pop("base", 8), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [dict(s, dilation_pair=list(s["dilation_pair"])) for s in d["stages"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)

    def with_mode(self, attention_mode: str, cam_enabled: bool) -> "ModelConfig":
        return replace(self, attention_mode=attention_mode, cam_enabled=cam_enabled)


ABLATION_VARIANTS = {
    "NA w/o CAM": ("na_only", False),
    "NA w/ CAM": ("na_only", True),
    "DiNA w/o CAM": ("dina_only", False),
    "DiNA w/ CAM": ("dina_only", True),
    "NA-DiNA w/o CAM": ("alternating", False),
    "NA-DiNA w/ CAM": ("alternating", True),
}


def dilation_schedule(stage: StageSpec, mode: str) -> list[int]:
    d = stage.dilation_pair[1]
    if mode == "alternating":
        return [1 if i % 2 == 0 else d for i in range(stage.blocks)]
    if mode == "na_only":
        return [1] * stage.blocks
    if mode == "dina_only":
        return [d] * stage.blocks
    raise ConfigError(f"unknown attention mode {mode!r}")


def gdfn_hidden(channels: int, expansion: float) -> int:
    # round before ceil so 2.66 * 50 does not become 133.00000000000003 -> 134
    return math.ceil(round(expansion * channels, 9))


class GDFN(Module):
    """Gated depthwise feed-forward: 1x1 expand, 3x3 depthwise, gelu gate, 1x1 project."""

    def __init__(self, channels: int, expansion: float, rng: np.random.Generator, dtype=np.float32):
        hidden = gdfn_hidden(channels, expansion)
        self.project_in = Conv2d(channels, 2 * hidden, 1, rng, dtype=dtype)
        self.dwconv = Conv2d(2 * hidden, 2 * hidden, 3, rng, groups=2 * hidden, dtype=dtype)
        self.project_out = Conv2d(hidden, channels, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        a, b = F.chunk2(self.dwconv(self.project_in(x)), axis=1)
        return self.project_out(F.mul(F.gelu(a), b))


class TransformerBlock(Module):
    """z = y + GDFN(LN(y)), y = x + CASA(LN(x))."""

    def __init__(self, channels: int, heads: int, dilation: int, cfg: ModelConfig,
                 rng: np.random.Generator, dtype=np.float32):
        acfg = AttentionConfig(channels=channels, heads=heads, k=cfg.k, dilation=dilation,
                               auto_clamp=cfg.auto_clamp)
        self.norm1 = LayerNorm2d(channels, dtype=dtype)
        self.attn = ChannelAwareAttention(acfg, rng, cam_enabled=cfg.cam_enabled, dtype=dtype)
        self.norm2 = LayerNorm2d(channels, dtype=dtype)
        self.ffn = GDFN(channels, cfg.gdfn_expansion, rng, dtype)
        self.dilation = dilation

    def forward(self, x: Tensor) -> Tensor:
        y = F.add(x, self.attn(self.norm1(x)))
        return F.add(y, self.ffn(self.norm2(y)))


class Stage(Module):
    def __init__(self, channels: int, heads: int, dilations: list[int], cfg: ModelConfig,
                 rng: np.random.Generator, dtype=np.float32):
        self.blocks = [TransformerBlock(channels, heads, d, cfg, rng, dtype) for d in dilations]

    def forward(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x


class Downsample(Module):
    """3x3 conv C -> C/2, then pixel-unshuffle: (C, H, W) -> (2C, H/2, W/2)."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        self.conv = Conv2d(channels, channels // 2, 3, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.pixel_unshuffle(self.conv(x), 2)


class Upsample(Module):
    """3x3 conv C -> 2C, then pixel-shuffle: (C, H, W) -> (C/2, 2H, 2W)."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        self.conv = Conv2d(channels, channels * 2, 3, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.pixel_shuffle(self.conv(x), 2)


class DiNATIR(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        b = cfg.base_channels
        s1, s2, s3, s4 = cfg.stages
        mode = cfg.attention_mode

        def level(spec: StageSpec, channels: int, heads: int, blocks: int) -> Stage:
            sched = dilation_schedule(replace(spec, blocks=blocks), mode)
            return Stage(channels, heads, sched, cfg, rng, dtype)

        self.embed = Conv2d(cfg.in_channels, b, 3, rng, dtype=dtype)
        self.enc1 = level(s1, b, s1.heads, s1.blocks)
        self.down1 = Downsample(b, rng, dtype)
        self.enc2 = level(s2, 2 * b, s2.heads, s2.blocks)
        self.down2 = Downsample(2 * b, rng, dtype)
        self.enc3 = level(s3, 4 * b, s3.heads, s3.blocks)
        self.down3 = Downsample(4 * b, rng, dtype)
        self.latent = level(s4, 8 * b, s4.heads, s4.blocks)
        self.up3 = Upsample(8 * b, rng, dtype)
        self.reduce3 = Conv2d(8 * b, 4 * b, 1, rng, dtype=dtype)
        self.dec3 = level(s3, 4 * b, s3.heads, s3.blocks)
        self.up2 = Upsample(4 * b, rng, dtype)
        self.reduce2 = Conv2d(4 * b, 2 * b, 1, rng, dtype=dtype)
        self.dec2 = level(s2, 2 * b, s2.heads, s2.blocks)
        self.up1 = Upsample(2 * b, rng, dtype)
        self.dec1 = level(s1, 2 * b, s1.heads, s1.blocks)
        self.refine = (level(s1, 2 * b, s1.heads, cfg.refinement_blocks)
                       if cfg.refinement_blocks else None)
        self.output = Conv2d(2 * b, cfg.out_channels, 3, rng, dtype=dtype)
        self.cfg = cfg

    @property
    def dtype(self):
        return self.embed.weight.dtype

    def forward(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        if C != self.cfg.in_channels:
            raise DimensionError(f"model expects {self.cfg.in_channels} input channels, got {C}")
        if H % 8 or W % 8:
            raise DimensionError(f"spatial extent {H}x{W} must be divisible by 8")
        e1 = self.enc1(self.embed(x))
        e2 = self.enc2(self.down1(e1))
        e3 = self.enc3(self.down2(e2))
        z = self.latent(self.down3(e3))
        d3 = self.dec3(self.reduce3(F.concat([self.up3(z), e3], axis=1)))
        d2 = self.dec2(self.reduce2(F.concat([self.up2(d3), e2], axis=1)))
        d1 = self.dec1(F.concat([self.up1(d2), e1], axis=1))
        if self.refine is not None:
            d1 = self.refine(d1)
        return F.add(self.output(d1), self._residual(x))

    def _residual(self, x: Tensor) -> Tensor:
        oc = self.cfg.out_channels
        if x.shape[1] == oc:
            return x
        a = F.slice_axis(x, 0, oc, 1)
        b = F.slice_axis(x, oc, 2 * oc, 1)
        return F.mul(F.add(a, b), 0.5)


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> DiNATIR:
    """Instantiate the network; weights ~ N(0, 0.02) from ``seed``, norms at identity."""
    model = DiNATIR(cfg, np.random.default_rng(seed), dtype)
    for name, p in model.named_parameters():
        p.name = name
    return model


def _block_params(c: int, heads: int, cfg: ModelConfig) -> int:
    hidden = gdfn_hidden(c, cfg.gdfn_expansion)
    attn = 4 * c * c + heads * (2 * cfg.k - 1) ** 2
    cam = 3 if cfg.cam_enabled else 0
    ffn = c * 2 * hidden + 2 * hidden * 9 + hidden * c
    return 2 * c + attn + cam + 2 * c + ffn


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count; agrees with ``build_model(cfg).num_parameters()``."""
    b = cfg.base_channels
    s = cfg.stages
    n = cfg.in_channels * b * 9 + 2 * b * cfg.out_channels * 9
    n += s[0].blocks * _block_params(b, s[0].heads, cfg)
    n += s[1].blocks * _block_params(2 * b, s[1].heads, cfg)
    n += s[2].blocks * _block_params(4 * b, s[2].heads, cfg)
    n += s[3].blocks * _block_params(8 * b, s[3].heads, cfg)
    n += s[2].blocks * _block_params(4 * b, s[2].heads, cfg)
    n += s[1].blocks * _block_params(2 * b, s[1].heads, cfg)
    n += (s[0].blocks + cfg.refinement_blocks) * _block_params(2 * b, s[0].heads, cfg)
    for c in (b, 2 * b, 4 * b):
        n += c * (c // 2) * 9           # downsample
    for c in (8 * b, 4 * b, 2 * b):
        n += c * (2 * c) * 9            # upsample
    n += 8 * b * 4 * b + 4 * b * 2 * b  # 1x1 skip fusion at levels 3 and 2
    return n
