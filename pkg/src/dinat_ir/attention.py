"""Two-dimensional (dilated) neighborhood attention.

Each query attends to a k x k grid of keys laid out with stride ``dilation``
on the query's own residue class. Near borders the window slides inward
instead of padding, so every query always sees exactly k*k real neighbors.
With dilation 1 this is plain neighborhood attention; nothing else changes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from . import functional as F
from .errors import ConfigError, DimensionError, GeometryError
from .nn import Module, normal_param
from .tensor import Parameter, Tensor, make_result

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttentionConfig:
    channels: int
    heads: int = 1
    k: int = 7
    dilation: int = 1
    auto_clamp: bool = True

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"neighborhood size must be odd and >= 1, got {self.k}")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")
        if self.heads < 1 or self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads


# ---------------------------------------------------------------- geometry

@lru_cache(maxsize=None)
def _warn_clamp(delta: int, k: int, size: int, eff: int) -> None:
    log.warning("dilation %d with k=%d does not fit extent %d; clamped to %d", delta, k, size, eff)


def _axis_window(k: int, size: int, auto_clamp: bool) -> int:
    if k <= size:
        return k
    if not auto_clamp:
        raise GeometryError(f"extent {size} smaller than neighborhood size {k}")
    eff = size if size % 2 else size - 1
    _warn_window(k, size, eff)
    return eff


@lru_cache(maxsize=None)
def _warn_window(k: int, size: int, eff: int) -> None:
    log.warning("neighborhood %d does not fit extent %d; window clamped to %d", k, size, eff)


def _axis_dilation(delta: int, k: int, size: int, auto_clamp: bool) -> int:
    k = _axis_window(k, size, auto_clamp)
    if k * delta <= size:
        return delta
    if not auto_clamp:
        raise GeometryError(f"extent {size} too small for k={k}, dilation={delta} (needs >= {k * delta})")
    eff = max(1, min(delta, size // k))
    _warn_clamp(delta, k, size, eff)
    return eff


def effective_dilation(delta: int, k: int, H: int, W: int, auto_clamp: bool = True) -> tuple[int, int]:
    """Per-axis dilation actually used for an H x W input.

    Every residue class modulo the dilation must hold at least k positions,
    i.e. ``k * dilation <= extent``.
    """
    return _axis_dilation(delta, k, H, auto_clamp), _axis_dilation(delta, k, W, auto_clamp)


def effective_window(k: int, H: int, W: int, auto_clamp: bool = True) -> tuple[int, int]:
    """Per-axis neighborhood size; shrinks to the largest odd size that fits when clamping."""
    return _axis_window(k, H, auto_clamp), _axis_window(k, W, auto_clamp)


def _window_start(pos: int, size: int, k: int, delta: int) -> int:
    r = pos % delta
    last = r + delta * ((size - 1 - r) // delta)  # last member of the residue class
    s = pos - delta * (k // 2)
    return min(max(s, r), last - (k - 1) * delta)


def neighbor_map(p: tuple[int, int], H: int, W: int, k, delta) -> list[tuple[int, int]]:
    """The k*k key positions of query ``p`` in row-major order.

    ``k`` and ``delta`` are ints or per-axis (y, x) pairs.
    """
    ky, kx = (k, k) if isinstance(k, int) else k
    dy, dx = (delta, delta) if isinstance(delta, int) else delta
    for size, kk, d in ((H, ky, dy), (W, kx, dx)):
        if kk * d > size:
            raise GeometryError(f"extent {size} too small for k={kk}, dilation={d}")
    y, x = p
    sy = _window_start(y, H, ky, dy)
    sx = _window_start(x, W, kx, dx)
    return [(sy + a * dy, sx + b * dx) for a in range(ky) for b in range(kx)]


def rel_index(p_q: tuple[int, int], p_n: tuple[int, int], delta, k: int) -> tuple[int, int]:
    """Bias-table coordinates of neighbor ``p_n`` relative to query ``p_q``."""
    dy, dx = (delta, delta) if isinstance(delta, int) else delta
    oy, ox = p_n[0] - p_q[0], p_n[1] - p_q[1]
    assert oy % dy == 0 and ox % dx == 0, "neighbor not on the query's residue grid"
    return oy // dy + k - 1, ox // dx + k - 1


def _neighbor_index(size: int, k: int, delta: int) -> np.ndarray:
    """(size, k) table of neighbor coordinates along one axis, vectorized."""
    pos = np.arange(size)
    r = pos % delta
    idx = pos // delta
    n_class = (size - 1 - r) // delta + 1
    start = np.clip(idx - k // 2, 0, n_class - k)
    return r[:, None] + delta * (start[:, None] + np.arange(k)[None, :])


@dataclass(frozen=True)
class _Geometry:
    slots: int           # neighbors per query, ky * kx
    flat: np.ndarray     # (H*W*slots,) source position of each neighbor slot
    rel_flat: np.ndarray  # (H*W*slots,) flattened bias-table index
    scatter: sparse.csr_matrix  # (H*W, H*W*slots) one-hot slot -> source


@lru_cache(maxsize=256)
def geometry(H: int, W: int, k: int, dy: int, dx: int, ky: int | None = None, kx: int | None = None) -> _Geometry:
    """Neighbor tables for an H x W map. ``k`` sizes the bias table; ``ky``/``kx``
    (default ``k``) are the windows actually used, which index its centre."""
    ky = k if ky is None else ky
    kx = k if kx is None else kx
    iy = _neighbor_index(H, ky, dy)
    ix = _neighbor_index(W, kx, dx)
    ry = (iy - np.arange(H)[:, None]) // dy + k - 1
    rx = (ix - np.arange(W)[:, None]) // dx + k - 1
    IY = np.broadcast_to(iy[:, None, :, None], (H, W, ky, kx))
    IX = np.broadcast_to(ix[None, :, None, :], (H, W, ky, kx))
    flat = (IY * W + IX).reshape(-1)
    RY = np.broadcast_to(ry[:, None, :, None], (H, W, ky, kx))
    RX = np.broadcast_to(rx[None, :, None, :], (H, W, ky, kx))
    rel_flat = (RY * (2 * k - 1) + RX).reshape(-1)
    n = flat.size
    scatter = sparse.csr_matrix((np.ones(n), (flat, np.arange(n))), shape=(H * W, n))
    return _Geometry(ky * kx, flat, rel_flat, scatter)


def _geometry_for(cfg: "AttentionConfig", H: int, W: int) -> _Geometry:
    ky, kx = effective_window(cfg.k, H, W, cfg.auto_clamp)
    dy, dx = effective_dilation(cfg.dilation, cfg.k, H, W, cfg.auto_clamp)
    return geometry(H, W, cfg.k, dy, dx, ky, kx)


# ---------------------------------------------------------------- kernels

def _check_qkv(q: Tensor, k_t: Tensor, v: Tensor, k: int) -> tuple[int, ...]:
    if q.ndim != 5 or q.shape != k_t.shape or q.shape != v.shape:
        raise DimensionError(f"q/k/v must share a (B,h,H,W,d) shape, got {q.shape}, {k_t.shape}, {v.shape}")
    return q.shape


def _bias_tensor(bias, heads: int, k: int, dtype) -> Tensor:
    if bias is None:
        return Tensor(np.zeros((heads, 2 * k - 1, 2 * k - 1), dtype=dtype))
    if bias.shape != (heads, 2 * k - 1, 2 * k - 1):
        raise DimensionError(f"bias table must be {(heads, 2 * k - 1, 2 * k - 1)}, got {bias.shape}")
    return bias


def _scatter(geo: _Geometry, g: np.ndarray, B: int, h: int, H: int, W: int, d: int) -> np.ndarray:
    """Sum (B,h,H,W,k*k,d) neighbor-slot gradients back onto (B,h,H,W,d) sources."""
    kk = g.shape[4]
    gt = g.transpose(2, 3, 4, 0, 1, 5).reshape(H * W * kk, B * h * d)
    src = geo.scatter.astype(g.dtype, copy=False) @ gt
    return np.ascontiguousarray(src.reshape(H, W, B, h, d).transpose(2, 3, 0, 1, 4))


def dina_attend(q: Tensor, k_t: Tensor, v: Tensor, bias: Tensor | None, cfg: AttentionConfig) -> Tensor:
    """Fused dilated neighborhood attention on (B, heads, H, W, head_dim) inputs.

    score = q . k_neighbor / sqrt(head_dim) + bias[head, rel_y, rel_x], softmax
    over the k*k neighbors, then the weighted sum of neighbor values.
    """
    B, h, H, W, d = _check_qkv(q, k_t, v, cfg.k)
    k = cfg.k
    geo = _geometry_for(cfg, H, W)
    kk = geo.slots
    bias = _bias_tensor(bias, h, k, q.dtype)
    scale = 1.0 / math.sqrt(d)

    kflat = k_t.data.reshape(B, h, H * W, d)
    vflat = v.data.reshape(B, h, H * W, d)
    kg = kflat[:, :, geo.flat].reshape(B, h, H, W, kk, d)
    vg = vflat[:, :, geo.flat].reshape(B, h, H, W, kk, d)
    bg = bias.data.reshape(h, -1)[:, geo.rel_flat].reshape(1, h, H, W, kk)

    scores = np.matmul(kg, q.data[..., None])[..., 0] * scale + bg
    attn = F.softmax_np(scores, -1)
    out = np.matmul(attn[..., None, :], vg)[..., 0, :]

    def bw(g):
        gq = gk = gv = gb = None
        dattn = np.matmul(vg, g[..., None])[..., 0]
        dscores = attn * (dattn - np.sum(dattn * attn, axis=-1, keepdims=True))
        if v.requires_grad:
            gv = _scatter(geo, attn[..., None] * g[..., None, :], B, h, H, W, d)
        if q.requires_grad:
            gq = np.matmul(dscores[..., None, :], kg)[..., 0, :] * scale
        if k_t.requires_grad:
            gk = _scatter(geo, (dscores * scale)[..., None] * q.data[..., None, :], B, h, H, W, d)
        if bias.requires_grad:
            per_slot = dscores.sum(axis=0).reshape(h, -1)
            gb = np.zeros((h, (2 * k - 1) ** 2), dtype=per_slot.dtype)
            for head in range(h):
                gb[head] = np.bincount(geo.rel_flat, weights=per_slot[head], minlength=gb.shape[1])
            gb = gb.reshape(bias.shape)
        return gq, gk, gv, gb

    return make_result(out, (q, k_t, v, bias), bw)


def dina_attend_composed(q: Tensor, k_t: Tensor, v: Tensor, bias: Tensor | None, cfg: AttentionConfig) -> Tensor:
    """Same computation as :func:`dina_attend` built from generic autodiff ops.

    Slower and memory hungry; exists to cross-check the fused backward rule.
    """
    B, h, H, W, d = _check_qkv(q, k_t, v, cfg.k)
    k = cfg.k
    geo = _geometry_for(cfg, H, W)
    kk = geo.slots
    bias = _bias_tensor(bias, h, k, q.dtype)

    kg = F.reshape(F.take(F.reshape(k_t, (B, h, H * W, d)), geo.flat, axis=2), (B, h, H, W, kk, d))
    vg = F.reshape(F.take(F.reshape(v, (B, h, H * W, d)), geo.flat, axis=2), (B, h, H, W, kk, d))
    bg = F.reshape(F.take(F.reshape(bias, (h, -1)), geo.rel_flat, axis=1), (1, h, H, W, kk))
    scores = F.sum(F.mul(F.reshape(q, (B, h, H, W, 1, d)), kg), axis=-1)
    scores = F.add(F.mul(scores, 1.0 / math.sqrt(d)), bg)
    attn = F.softmax(scores, axis=-1)
    return F.sum(F.mul(F.reshape(attn, (B, h, H, W, kk, 1)), vg), axis=-2)


def dense_oracle(q, k_t, v, bias, cfg: AttentionConfig) -> np.ndarray:
    """Brute-force reference: full (HW x HW) scores masked to each neighbor set.

    Built from :func:`neighbor_map` and :func:`rel_index` one query at a time,
    independent of the vectorized tables used by the kernels. Only meant for
    H*W <= 256.
    """
    q, k_t, v = (np.asarray(getattr(t, "data", t)) for t in (q, k_t, v))
    B, h, H, W, d = q.shape
    k = cfg.k
    table = np.zeros((h, 2 * k - 1, 2 * k - 1)) if bias is None else np.asarray(getattr(bias, "data", bias))
    delta = effective_dilation(cfg.dilation, k, H, W, cfg.auto_clamp)
    window = effective_window(k, H, W, cfg.auto_clamp)
    n = H * W
    mask = np.full((h, n, n), -np.inf)
    for y in range(H):
        for x in range(W):
            row = y * W + x
            for ny, nx in neighbor_map((y, x), H, W, window, delta):
                ry, rx = rel_index((y, x), (ny, nx), delta, k)
                mask[:, row, ny * W + nx] = table[:, ry, rx]
    out = np.empty_like(q)
    for b in range(B):
        for head in range(h):
            qf = q[b, head].reshape(n, d)
            kf = k_t[b, head].reshape(n, d)
            vf = v[b, head].reshape(n, d)
            s = qf @ kf.T / math.sqrt(d) + mask[head]
            s = s - s.max(axis=1, keepdims=True)
            e = np.exp(s)
            p = e / e.sum(axis=1, keepdims=True)
            out[b, head] = (p @ vf).reshape(H, W, d)
    return out


def dense_attention(q, k_t, v) -> np.ndarray:
    """Unmasked softmax attention over all H*W positions, (B, h, H, W, d) layout."""
    q, k_t, v = (np.asarray(getattr(t, "data", t)) for t in (q, k_t, v))
    B, h, H, W, d = q.shape
    n = H * W
    qf, kf, vf = (t.reshape(B, h, n, d) for t in (q, k_t, v))
    s = np.matmul(qf, kf.swapaxes(-1, -2)) / math.sqrt(d)
    return np.matmul(F.softmax_np(s, -1), vf).reshape(B, h, H, W, d)


# ---------------------------------------------------------------- layer

class NeighborhoodAttention2d(Module):
    """Bias-free 1x1 q/k/v/out projections around :func:`dina_attend`.

    The learned relative-position table is one per layer, shape
    (heads, 2k-1, 2k-1), initialized to zero.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dtype=np.float32):
        C = cfg.channels
        self.wq = normal_param(rng, (C, C), dtype)
        self.wk = normal_param(rng, (C, C), dtype)
        self.wv = normal_param(rng, (C, C), dtype)
        self.wo = normal_param(rng, (C, C), dtype)
        self.rpb = Parameter(np.zeros((cfg.heads, 2 * cfg.k - 1, 2 * cfg.k - 1), dtype=dtype))
        self.cfg = cfg

    def forward(self, x: Tensor) -> Tensor:
        return attn_layer(x, self, self.cfg)


def attn_layer(x: Tensor, params: NeighborhoodAttention2d, cfg: AttentionConfig) -> Tensor:
    B, C, H, W = x.shape
    if C != cfg.channels:
        raise DimensionError(f"input has {C} channels, layer expects {cfg.channels}")
    h, d = cfg.heads, cfg.head_dim
    xf = F.reshape(x, (B, C, H * W))

    def heads(w):
        y = F.reshape(F.matmul(w, xf), (B, h, d, H, W))
        return F.transpose(y, (0, 1, 3, 4, 2))

    out = dina_attend(heads(params.wq), heads(params.wk), heads(params.wv), params.rpb, cfg)
    out = F.reshape(F.transpose(out, (0, 1, 4, 2, 3)), (B, C, H * W))
    return F.reshape(F.matmul(params.wo, out), (B, C, H, W))
