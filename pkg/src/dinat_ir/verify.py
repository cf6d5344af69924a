"""Finite-difference and brute-force oracle suites behind ``grad-check`` / ``oracle-check``."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .attention import AttentionConfig, NeighborhoodAttention2d, dense_oracle, dina_attend
from .channel import ChannelAwareAttention, ChannelAwareModule, cam
from .gradcheck import GradCheckReport, grad_check
from .model import GDFN, Downsample, ModelConfig, TransformerBlock, Upsample, build_model
from .nn import Module
from .tensor import Tensor
from .train import l1_loss, psnr_loss

ELEMENTARY_TOL = 1e-5
LAYER_TOL = 1e-4
MODEL_TOL = 1e-3


def _rand(rng, *shape, low=None) -> Tensor:
    if low is not None:
        return Tensor(rng.uniform(low, 1.0, size=shape))
    return Tensor(rng.standard_normal(shape))


def randomize_parameters(module: Module, rng: np.random.Generator, scale: float = 0.5) -> None:
    """Redraw every parameter at O(1) scale (f64).

    The default 0.02 init makes deep-layer gradients so small that central
    differences drown in round-off; correctness of the backward rules does not
    depend on the parameter values.
    """
    for name, p in module.named_parameters():
        v = rng.normal(0.0, scale if p.ndim > 1 else 0.3, size=p.shape)
        if name.endswith(("norm1.weight", "norm2.weight")):
            v += 1.0
        p.data = v.astype(np.float64)
        p.grad = np.zeros_like(p.data)


def _module_check(mod: Module, x: Tensor, tol: float, seed: int, max_checks=None) -> GradCheckReport:
    named = list(mod.named_parameters())
    inputs = [x] + [p for _, p in named]
    names = ["x"] + [n for n, _ in named]
    return grad_check(lambda xx, *ps: mod(xx), inputs, tol, seed=seed, max_checks=max_checks, names=names)


def op_suite(seed: int = 0) -> dict[str, GradCheckReport]:
    rng = np.random.default_rng(seed)
    t = ELEMENTARY_TOL
    x4 = _rand(rng, 2, 3, 5, 5)
    r = {}
    r["conv2d"] = grad_check(lambda a, w, b: F.conv2d(a, w, b, padding=1),
                             [x4, _rand(rng, 4, 3, 3, 3), _rand(rng, 4)], t, seed)
    r["conv2d_stride2"] = grad_check(lambda a, w: F.conv2d(a, w, stride=2, padding=1),
                                     [_rand(rng, 1, 2, 6, 6), _rand(rng, 3, 2, 3, 3)], t, seed)
    r["conv2d_depthwise"] = grad_check(lambda a, w: F.conv2d(a, w, padding=1, groups=3),
                                       [_rand(rng, 2, 3, 4, 4), _rand(rng, 3, 1, 3, 3)], t, seed)
    r["conv2d_grouped"] = grad_check(lambda a, w: F.conv2d(a, w, padding=1, groups=2),
                                     [_rand(rng, 1, 4, 4, 4), _rand(rng, 6, 2, 3, 3)], t, seed)
    r["conv1d"] = grad_check(lambda a, w: F.conv1d(a, w, padding=1),
                             [_rand(rng, 2, 1, 7), _rand(rng, 1, 1, 3)], t, seed)
    r["layer_norm"] = grad_check(lambda a, g, b: F.layer_norm(a, g, b),
                                 [_rand(rng, 2, 4, 3, 3), _rand(rng, 4), _rand(rng, 4)], t, seed)
    r["softmax"] = grad_check(lambda a: F.softmax(a, axis=1), [_rand(rng, 3, 5)], t, seed)
    r["sigmoid"] = grad_check(F.sigmoid, [_rand(rng, 4, 4)], t, seed)
    r["gelu"] = grad_check(F.gelu, [_rand(rng, 4, 4)], t, seed)
    r["gap2d"] = grad_check(F.gap2d, [_rand(rng, 2, 3, 4, 5)], t, seed)
    r["pixel_shuffle"] = grad_check(lambda a: F.pixel_shuffle(a, 2), [_rand(rng, 1, 8, 2, 3)], t, seed)
    r["pixel_unshuffle"] = grad_check(lambda a: F.pixel_unshuffle(a, 2), [_rand(rng, 1, 2, 4, 6)], t, seed)
    r["ew_add_broadcast"] = grad_check(lambda a, b: F.add(a, b), [_rand(rng, 2, 3, 4, 4), _rand(rng, 1, 3, 1, 1)], t, seed)
    r["ew_mul_broadcast"] = grad_check(lambda a, b: F.mul(a, b), [_rand(rng, 2, 3, 4, 4), _rand(rng, 2, 3, 1, 1)], t, seed)
    r["matmul"] = grad_check(F.matmul, [_rand(rng, 3, 4), _rand(rng, 2, 4, 5)], t, seed)
    r["take"] = grad_check(lambda a: F.take(a, np.array([[0, 2], [2, 2], [1, 0]]), axis=1),
                           [_rand(rng, 2, 3, 2)], t, seed)
    r["concat"] = grad_check(lambda a, b: F.concat([a, b], axis=1), [_rand(rng, 1, 2, 3, 3), _rand(rng, 1, 3, 3, 3)], t, seed)
    r["log"] = grad_check(F.log, [_rand(rng, 3, 3, low=0.5)], t, seed)
    gt = _rand(rng, 2, 3, 4, 4, low=0.0)
    r["psnr_loss"] = grad_check(lambda p: psnr_loss(p, gt), [_rand(rng, 2, 3, 4, 4, low=0.0)], t, seed)
    # keep every entry clear of the |x| kink so central differences stay on one side
    offset = rng.choice([-1.0, 1.0], size=gt.shape) * rng.uniform(0.05, 0.5, size=gt.shape)
    r["l1_loss"] = grad_check(lambda p: l1_loss(p, gt), [Tensor(gt.data + offset)], t, seed)
    return r


def attention_suite(seed: int = 0) -> dict[str, GradCheckReport]:
    rng = np.random.default_rng(seed)
    r = {}
    for delta in (1, 2):
        cfg = AttentionConfig(channels=4, heads=2, k=3, dilation=delta, auto_clamp=False)
        qkv = [_rand(rng, 1, 2, 6, 6, 2) for _ in range(3)]
        bias = _rand(rng, 2, 5, 5)
        r[f"dina_attend_d{delta}"] = grad_check(lambda q, k, v, b: dina_attend(q, k, v, b, cfg),
                                                qkv + [bias], ELEMENTARY_TOL, seed)
        layer = NeighborhoodAttention2d(cfg, rng, np.float64)
        randomize_parameters(layer, rng)
        r[f"attn_layer_d{delta}"] = _module_check(layer, _rand(rng, 1, 4, 6, 6), LAYER_TOL, seed)
        casa_layer = ChannelAwareAttention(cfg, rng, dtype=np.float64)
        randomize_parameters(casa_layer, rng)
        r[f"casa_d{delta}"] = _module_check(casa_layer, _rand(rng, 1, 4, 6, 6), LAYER_TOL, seed)
    cam_mod = ChannelAwareModule(rng, np.float64)
    randomize_parameters(cam_mod, rng)
    r["cam"] = _module_check(cam_mod, _rand(rng, 2, 5, 3, 3), ELEMENTARY_TOL, seed)
    return r


def block_suite(seed: int = 0) -> dict[str, GradCheckReport]:
    rng = np.random.default_rng(seed)
    r = {}
    gdfn = GDFN(4, 2.66, rng, np.float64)
    randomize_parameters(gdfn, rng)
    r["gdfn"] = _module_check(gdfn, _rand(rng, 1, 4, 5, 5), LAYER_TOL, seed)
    for delta in (1, 2):
        cfg = ModelConfig.micro(base=4, k=3)
        blk = TransformerBlock(4, 2, delta, cfg, rng, np.float64)
        randomize_parameters(blk, rng)
        r[f"block_d{delta}"] = _module_check(blk, _rand(rng, 1, 4, 6, 6), LAYER_TOL, seed)
    down = Downsample(4, rng, np.float64)
    randomize_parameters(down, rng)
    r["downsample"] = _module_check(down, _rand(rng, 1, 4, 4, 4), ELEMENTARY_TOL, seed)
    up = Upsample(4, rng, np.float64)
    randomize_parameters(up, rng)
    r["upsample"] = _module_check(up, _rand(rng, 1, 4, 3, 3), ELEMENTARY_TOL, seed)
    return r


def model_check(cfg: ModelConfig | None = None, seed: int = 0, size: int = 16,
                max_checks: int = 3, tol: float = MODEL_TOL) -> GradCheckReport:
    """End-to-end check on a micro network; ``max_checks`` sampled scalars per parameter tensor."""
    cfg = cfg or ModelConfig.micro(base=4, k=3)
    rng = np.random.default_rng(seed)
    model = build_model(cfg, seed, dtype=np.float64)
    randomize_parameters(model, rng)
    x = Tensor(rng.random((1, cfg.in_channels, size, size)))
    named = list(model.named_parameters())
    return grad_check(lambda *ps: model(x), [p for _, p in named], tol, seed=seed,
                      max_checks=max_checks, names=[n for n, _ in named])


def model_suite(seed: int = 0) -> dict[str, GradCheckReport]:
    return {"model": model_check(seed=seed)}


SUITES = {"ops": op_suite, "attention": attention_suite, "block": block_suite, "model": model_suite}


# ---------------------------------------------------------------- oracles

@dataclass
class OracleResult:
    name: str
    max_abs_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_abs_err <= self.tol)


def conv2d_loop(x: np.ndarray, w: np.ndarray, b=None, stride: int = 1, padding: int = 0, groups: int = 1) -> np.ndarray:
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    Og = O // groups
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            gi = o // Og
            for i in range(Ho):
                for j in range(Wo):
                    s = 0.0 if b is None else b[o]
                    for c in range(Cg):
                        for u in range(kh):
                            for v in range(kw):
                                s += xp[n, gi * Cg + c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[n, o, i, j] = s
    return out


def cam_loop(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    B, C = x.shape[:2]
    means = [[float(np.mean(x[b, c])) for c in range(C)] for b in range(B)]
    out = np.zeros((B, C, 1, 1))
    for b in range(B):
        for c in range(C):
            s = 0.0
            for t in range(3):
                j = c + t - 1
                if 0 <= j < C:
                    s += w[t] * means[b][j]
            out[b, c, 0, 0] = 1.0 / (1.0 + math.exp(-s))
    return out


ORACLE_GRID = list(itertools.product((4, 6, 8), (4, 6, 8), (1, 3), (1, 2)))


def dina_oracle_grid(seeds=range(10), base_seed: int = 0) -> OracleResult:
    worst = 0.0
    for s in seeds:
        rng = np.random.default_rng(base_seed * 1000 + s)
        for H, W, k, delta in ORACLE_GRID:
            cfg = AttentionConfig(channels=4, heads=2, k=k, dilation=delta)
            q, kt, v = (rng.standard_normal((2, 2, H, W, 2)) for _ in range(3))
            bias = rng.standard_normal((2, 2 * k - 1, 2 * k - 1))
            got = dina_attend(Tensor(q), Tensor(kt), Tensor(v), Tensor(bias), cfg).data
            worst = max(worst, float(np.max(np.abs(got - dense_oracle(q, kt, v, bias, cfg)))))
    return OracleResult("dina_attend vs dense_oracle", worst, 1e-10)


def oracle_suite(seed: int = 0) -> list[OracleResult]:
    rng = np.random.default_rng(seed)
    res = [dina_oracle_grid(base_seed=seed)]
    x, w, b = rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    got = F.conv2d(Tensor(x), Tensor(w), Tensor(b), padding=1).data
    res.append(OracleResult("conv2d vs loop", float(np.max(np.abs(got - conv2d_loop(x, w, b, padding=1)))), 1e-12))
    x, w = rng.standard_normal((1, 1, 16)), rng.standard_normal((1, 1, 3))
    got = F.conv1d(Tensor(x), Tensor(w), padding=1).data
    xp = np.pad(x[0, 0], 1)
    ref = np.array([[[sum(xp[i + t] * w[0, 0, t] for t in range(3)) for i in range(16)]]])
    res.append(OracleResult("conv1d vs loop", float(np.max(np.abs(got - ref))), 1e-12))
    x, cw = rng.standard_normal((2, 6, 4, 5)), rng.standard_normal(3)
    cm = ChannelAwareModule(rng, np.float64)
    cm.weight.data = cw.reshape(1, 1, 3)
    res.append(OracleResult("cam vs loop", float(np.max(np.abs(cam(Tensor(x), cm).data - cam_loop(x, cw)))), 1e-12))
    return res
