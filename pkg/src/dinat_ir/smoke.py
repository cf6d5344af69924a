"""Desk-scale training harness: the overfit smoke run and the attention/CAM ablation table."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import DegradationSpec, ImagePair, item_seed, procedural_image, synth_degrade, to_uint8
from .model import ABLATION_VARIANTS, ModelConfig, build_model
from .train import TrainConfig, baseline_psnr, evaluate, train_loop

# 500 steps is too short for the 3e-4 full-scale default to move a freshly
# initialized micro network by 5 dB
SMOKE_LR = 4e-3


@dataclass
class SmokeResult:
    seed: int
    baseline_psnr: float
    final_psnr: float
    seconds: float
    losses: list[float]

    @property
    def gain(self) -> float:
        return self.final_psnr - self.baseline_psnr


def smoke_pairs(seed: int, count: int = 4, size: int = 64, blur: str = "gaussian:1.5",
                noise: float = 0.0) -> list[ImagePair]:
    """Procedural clean images, 8-bit quantized, then degraded; same recipe as ``gen-data``."""
    spec = DegradationSpec.parse(blur, noise, seed)
    pairs = []
    for i in range(count):
        item_id = f"{i:04d}"
        clean = procedural_image(size, np.random.default_rng(item_seed(seed, "clean" + item_id)))
        clean = to_uint8(clean).astype(np.float32) / np.float32(255.0)
        pairs.append(synth_degrade(clean, spec, item_id))
    return pairs


def overfit_run(seed: int, cfg: ModelConfig | None = None, iters: int = 500, batch: int = 2,
                patch: int = 64, lr: float = SMOKE_LR, pairs: list[ImagePair] | None = None,
                out_path: str | None = None) -> SmokeResult:
    cfg = cfg or ModelConfig.micro()
    pairs = pairs if pairs is not None else smoke_pairs(seed)
    model = build_model(cfg, seed)
    tcfg = TrainConfig(iters=iters, batch=batch, patch_size=patch, lr_init=lr, seed=seed,
                       eval_every=0, out_path=out_path)
    t0 = time.perf_counter()
    res = train_loop(model, tcfg, pairs)
    secs = time.perf_counter() - t0
    final = evaluate(model, pairs)["psnr"]
    return SmokeResult(seed, baseline_psnr(pairs), final, secs, [r["loss"] for r in res.log])


def ablation_config(base: int = 8) -> ModelConfig:
    """Micro width with two blocks per level, so alternation actually alternates."""
    return ModelConfig.micro(base=base, blocks=(2, 2, 2, 2))


def ablation_table(seed: int = 0, iters: int = 150, batch: int = 2, patch: int = 32,
                   base: int = 8, size: int = 32) -> list[dict]:
    """Train every ablation variant on the same data and report PSNR and size."""
    pairs = smoke_pairs(seed, size=size)
    rows = []
    for name, (mode, cam_on) in ABLATION_VARIANTS.items():
        cfg = ablation_config(base).with_mode(mode, cam_on)
        r = overfit_run(seed, cfg, iters=iters, batch=batch, patch=patch, pairs=pairs)
        rows.append({"variant": name, "attention_mode": mode, "cam": cam_on,
                     "params": build_model(cfg).num_parameters(),
                     "baseline_psnr": r.baseline_psnr, "psnr": r.final_psnr, "seconds": r.seconds})
    return rows


def format_table(rows: list[dict]) -> str:
    lines = [f"{'variant':<18s}{'params':>9s}{'PSNR':>9s}{'gain':>8s}{'time(s)':>9s}"]
    for r in rows:
        lines.append(f"{r['variant']:<18s}{r['params']:>9d}{r['psnr']:>9.2f}"
                     f"{r['psnr'] - r['baseline_psnr']:>+8.2f}{r['seconds']:>9.1f}")
    return "\n".join(lines)
