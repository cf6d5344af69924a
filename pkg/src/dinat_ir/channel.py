"""Channel-aware gating of the spatial attention output."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .attention import AttentionConfig, NeighborhoodAttention2d
from .nn import Module, normal_param
from .tensor import Tensor


class ChannelAwareModule(Module):
    """GAP -> 3-tap conv across channels (zero-padded, no bias) -> sigmoid.

    Returns one gate per channel, shaped (B, C, 1, 1).
    """

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.weight = normal_param(rng, (1, 1, 3), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return cam(x, self)


def cam(x: Tensor, params: ChannelAwareModule) -> Tensor:
    B, C = x.shape[:2]
    pooled = F.reshape(F.gap2d(x), (B, 1, C))
    mixed = F.conv1d(pooled, params.weight, padding=1)
    return F.sigmoid(F.reshape(mixed, (B, C, 1, 1)))


class ChannelAwareAttention(Module):
    """Spatial neighborhood attention, optionally gated by :class:`ChannelAwareModule`.

    Both branches read the same (already normalized) input. Without the gate the
    layer is exactly the attention layer.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, *,
                 cam_enabled: bool = True, dtype=np.float32):
        self.attn = NeighborhoodAttention2d(cfg, rng, dtype)
        if cam_enabled:
            self.cam = ChannelAwareModule(rng, dtype)
        self.cfg = cfg

    @property
    def cam_enabled(self) -> bool:
        return hasattr(self, "cam")

    def forward(self, x: Tensor) -> Tensor:
        return casa(x, self.attn, getattr(self, "cam", None))


def casa(x: Tensor, attn: NeighborhoodAttention2d, cam_params: ChannelAwareModule | None) -> Tensor:
    y = attn(x)
    if cam_params is None:
        return y
    return F.mul(y, cam(x, cam_params))
