"""Losses, AdamW, cosine learning-rate schedule and the training loop."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import functional as F
from .checkpoint import save_checkpoint
from .data import ImagePair, augment, sample_patch
from .errors import ConfigError, DataError, NumericalError
from .metrics import psnr
from .model import DiNATIR
from .tensor import Parameter, Tape, Tensor, backward, no_grad

log = logging.getLogger(__name__)

PSNR_LOSS_EPS = 1e-8
_TEN_OVER_LN10 = 10.0 / math.log(10.0)


@dataclass
class TrainConfig:
    iters: int = 1000
    batch: int = 4
    patch_size: int = 64
    lr_init: float = 3e-4
    lr_min: float = 1e-6
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    loss: str = "psnr"
    seed: int = 0
    eval_every: int = 100
    augment: bool = True
    data_dir: str | None = None
    out_path: str | None = None

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.lr_min > self.lr_init:
            raise ConfigError("lr_min must not exceed lr_init")
        if self.patch_size % 8:
            raise ConfigError(f"patch_size {self.patch_size} must be divisible by 8")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {sorted(LOSSES)}")
        if self.iters < 1 or self.batch < 1:
            raise ConfigError("iters and batch must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- losses

def psnr_loss(pred: Tensor, gt: Tensor, eps: float = PSNR_LOSS_EPS) -> Tensor:
    """Mean over the batch of 10 log10(MSE_b + eps): the negated PSNR, floored by eps."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mse = F.mean(F.square(F.sub(pred, gt)), axis=(1, 2, 3))
    return F.mul(F.mean(F.log(F.add(mse, eps))), _TEN_OVER_LN10)


def l1_loss(pred: Tensor, gt: Tensor) -> Tensor:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return F.mean(F.abs(F.sub(pred, gt)))


LOSSES = {"psnr": psnr_loss, "l1": l1_loss}


# ---------------------------------------------------------------- optimization

def cosine_lr(step: int, total_steps: int, lr_init: float = 3e-4, lr_min: float = 1e-6) -> float:
    t = min(max(step, 0), total_steps)
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + math.cos(math.pi * t / total_steps))


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params: list[Parameter], state: OptimState, lr: float,
               betas: tuple[float, float] = (0.9, 0.999), weight_decay: float = 0.0,
               eps: float = 1e-8) -> None:
    """One AdamW update in place; decay multiplies the weights, not the gradient."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, p in enumerate(params):
        key = p.name or str(i)
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if key not in state.m:
            state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        m, v = state.m[key], state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


# ---------------------------------------------------------------- loop

def _to_batch(pairs: list[ImagePair], dtype) -> tuple[Tensor, Tensor]:
    x = Tensor(np.stack([p.degraded for p in pairs]).astype(dtype))
    y = Tensor(np.stack([p.clean for p in pairs]).astype(dtype))
    return x, y


def pad_to_multiple(img: np.ndarray, m: int = 8) -> tuple[np.ndarray, tuple[int, int]]:
    H, W = img.shape[-2:]
    ph, pw = (-H) % m, (-W) % m
    if ph or pw:
        pad = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
        img = np.pad(img, pad, mode="reflect")
    return img, (H, W)


def restore(model: DiNATIR, degraded: np.ndarray) -> np.ndarray:
    """Run one (C, H, W) image through the model, reflect-padding to a multiple of 8."""
    padded, (H, W) = pad_to_multiple(degraded)
    with no_grad():
        out = model(Tensor(padded[None].astype(model.dtype))).data[0]
    return np.clip(out[:, :H, :W], 0.0, 1.0)


def evaluate(model: DiNATIR, pairs: list[ImagePair]) -> dict:
    from .metrics import ssim
    if not pairs:
        raise DataError("evaluation set is empty")
    ps, ss = [], []
    for p in pairs:
        out = restore(model, p.degraded)
        ps.append(psnr(out, p.clean))
        ss.append(ssim(out, p.clean))
    return {"psnr": float(np.mean(ps)), "ssim": float(np.mean(ss)), "n": len(pairs)}


def baseline_psnr(pairs: list[ImagePair]) -> float:
    """Mean PSNR of the degraded inputs against the clean targets (first view if dual)."""
    return float(np.mean([psnr(p.degraded[:3], p.clean) for p in pairs]))


@dataclass
class TrainResult:
    log: list[dict]
    best_psnr: float
    final_psnr: float


def train_loop(model: DiNATIR, cfg: TrainConfig, train_pairs: list[ImagePair],
               eval_pairs: list[ImagePair] | None = None) -> TrainResult:
    """Train in place. Writes ``<out>.csv`` and checkpoints when ``cfg.out_path`` is set.

    Eval runs every ``eval_every`` iterations and after the last one; the best
    eval PSNR so far is checkpointed to ``<out>.best``.
    """
    if not train_pairs:
        raise DataError("training set is empty")
    eval_pairs = train_pairs if eval_pairs is None else eval_pairs
    rng = np.random.default_rng(cfg.seed)
    loss_fn = LOSSES[cfg.loss]
    params = model.parameters()
    state = OptimState()
    out = Path(cfg.out_path) if cfg.out_path else None
    rows: list[dict] = []
    best = -math.inf
    last_eval = math.nan

    fh = writer = None
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        fh = open(out.with_suffix(".csv"), "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iter", "lr", "loss", "eval_psnr"])
    try:
        for it in range(cfg.iters):
            lr = cosine_lr(it, cfg.iters, cfg.lr_init, cfg.lr_min)
            batch = []
            for _ in range(cfg.batch):
                pair = train_pairs[int(rng.integers(len(train_pairs)))]
                pair = sample_patch(pair, cfg.patch_size, rng)
                batch.append(augment(pair, rng) if cfg.augment else pair)
            x, y = _to_batch(batch, model.dtype)
            with Tape() as tape:
                loss = loss_fn(model(x), y)
            value = float(loss.data)
            if not math.isfinite(value):
                _dump_nan(out, it, lr, value, model)
                raise NumericalError(f"non-finite loss {value} at iteration {it}")
            backward(loss, tape)
            adamw_step(params, state, lr, cfg.betas, cfg.weight_decay)
            model.zero_grad()

            row = {"iter": it, "lr": lr, "loss": value, "eval_psnr": None}
            if (cfg.eval_every and (it + 1) % cfg.eval_every == 0) or it + 1 == cfg.iters:
                last_eval = evaluate(model, eval_pairs)["psnr"]
                row["eval_psnr"] = last_eval
                if last_eval > best:
                    best = last_eval
                    if out is not None:
                        save_checkpoint(model, out.with_name(out.name + ".best"), it + 1, cfg.seed)
                log.info("iter %d loss %.5f eval psnr %.3f", it, value, last_eval)
            rows.append(row)
            if writer is not None:
                writer.writerow([it, repr(lr), repr(value), "" if row["eval_psnr"] is None else repr(row["eval_psnr"])])
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        save_checkpoint(model, out, cfg.iters, cfg.seed)
    return TrainResult(rows, best, last_eval)


def _dump_nan(out: Path | None, it: int, lr: float, value: float, model: DiNATIR) -> None:
    norms = {n: float(np.linalg.norm(p.data)) for n, p in model.named_parameters()}
    info = {"iteration": it, "lr": lr, "loss": repr(value),
            "nonfinite_params": [n for n, v in norms.items() if not math.isfinite(v)],
            "param_norms": norms}
    if out is not None:
        out.with_name(out.name + ".nan.json").write_text(json.dumps(info, indent=2))
    log.error("non-finite loss at iteration %d; state: %s", it, {k: info[k] for k in ("lr", "loss", "nonfinite_params")})
