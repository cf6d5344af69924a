"""Command-line entry point: ``dinatir <command> [flags]``.

Exit codes: 0 success, 2 usage/config, 3 data or file format, 4 numerical
failure (NaN loss, failed gradient or oracle check).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError, GeometryError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

PRESETS = ("micro", "ablation", "full")
REFERENCE_PARAMS = {"full": 25.90e6, "ablation": 3.0e6}


def _echo(title: str, payload: dict) -> None:
    print(f"[{title}] " + json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)


def _model_config(section: dict | None, preset: str | None):
    from .model import ModelConfig
    section = dict(section or {})
    preset = section.pop("preset", None) or preset
    if preset is None and "stages" in section:
        return ModelConfig.from_dict(section)
    preset = preset or "micro"
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    return getattr(ModelConfig, preset)(**section)


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(cfg) - {"model", "train"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}; expected 'model' and/or 'train'")
    return cfg


def _apply_threads(n: int | None) -> None:
    if n:
        from threadpoolctl import threadpool_limits
        threadpool_limits(n)


# ---------------------------------------------------------------- commands

def cmd_gen_data(a) -> int:
    from .data import DegradationSpec, generate_dataset
    if a.size % 8:
        raise ConfigError(f"--size {a.size} must be divisible by 8")
    spec = DegradationSpec.parse(a.blur, a.noise, a.seed)
    _echo("gen-data", {"out": a.out, "count": a.count, "size": a.size, "degradation": spec.__dict__})
    entries = generate_dataset(a.out, a.count, a.size, spec)
    print(f"wrote {len(entries)} pairs to {a.out}")
    return EXIT_OK


def cmd_train(a) -> int:
    from .data import load_pairs
    from .model import build_model
    from .train import TrainConfig, baseline_psnr, train_loop
    file_cfg = _read_config(a.config)
    mcfg = _model_config(file_cfg.get("model"), a.preset)
    tdict = dict(file_cfg.get("train", {}))
    overrides = {"iters": a.iters, "batch": a.batch, "patch_size": a.patch, "seed": a.seed,
                 "lr_init": a.lr, "loss": a.loss, "eval_every": a.eval_every}
    tdict.update({k: v for k, v in overrides.items() if v is not None})
    if a.no_augment:
        tdict["augment"] = False
    tdict["data_dir"] = a.data
    tdict["out_path"] = a.out
    tcfg = TrainConfig.from_dict(tdict)
    _echo("model", mcfg.to_dict())
    _echo("train", tcfg.to_dict())
    pairs = load_pairs(a.data)
    eval_pairs = load_pairs(a.eval_data) if a.eval_data else None
    model = build_model(mcfg, tcfg.seed)
    result = train_loop(model, tcfg, pairs, eval_pairs)
    base = baseline_psnr(eval_pairs or pairs)
    print(f"degraded baseline {base:.2f} dB, final {result.final_psnr:.2f} dB, best {result.best_psnr:.2f} dB")
    return EXIT_OK


def cmd_eval(a) -> int:
    from .checkpoint import load_checkpoint
    from .data import load_pairs
    from .train import baseline_psnr, evaluate
    model, header = load_checkpoint(a.ckpt)
    _echo("eval", {"ckpt": a.ckpt, "data": a.data, "iteration": header.get("iteration")})
    pairs = load_pairs(a.data)
    res = evaluate(model, pairs)
    if a.json:
        print(json.dumps(res, sort_keys=True))
    else:
        print(f"{'set':<12s}{'PSNR':>10s}{'SSIM':>10s}{'n':>6s}")
        print(f"{'degraded':<12s}{baseline_psnr(pairs):>10.2f}{'':>10s}{len(pairs):>6d}")
        print(f"{'restored':<12s}{res['psnr']:>10.2f}{res['ssim']:>10.4f}{res['n']:>6d}")
    return EXIT_OK


def cmd_infer(a) -> int:
    from .checkpoint import load_checkpoint
    from .data import load_image, save_image
    from .train import restore
    model, _ = load_checkpoint(a.ckpt)
    _echo("infer", {"ckpt": a.ckpt, "input": a.input, "output": a.output})
    img = load_image(a.input)
    if model.cfg.in_channels != img.shape[0]:
        raise FormatError(f"model expects {model.cfg.in_channels} channels, image has {img.shape[0]}")
    save_image(restore(model, img), a.output)
    return EXIT_OK


def cmd_grad_check(a) -> int:
    from .verify import SUITES
    targets = list(SUITES) if a.target == "all" else [a.target]
    _echo("grad-check", {"targets": targets, "seed": a.seed})
    ok = True
    for t in targets:
        for name, rep in SUITES[t](a.seed).items():
            status = "PASS" if rep.passed else "FAIL"
            print(f"{status} {t:<10s}{name:<22s} max_rel_err={rep.max_rel_err:.3e} tol={rep.tol_rel:g}")
            ok &= rep.passed
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_oracle_check(a) -> int:
    from .verify import oracle_suite
    _echo("oracle-check", {"seed": a.seed})
    ok = True
    for r in oracle_suite(a.seed):
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<30s} max_abs_err={r.max_abs_err:.3e} tol={r.tol:g}")
        ok &= r.passed
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_param_count(a) -> int:
    from .model import param_count
    file_cfg = _read_config(a.config)
    cfg = _model_config(file_cfg.get("model"), a.preset)
    _echo("param-count", cfg.to_dict())
    n = param_count(cfg)
    out = {"params": n, "params_m": round(n / 1e6, 2)}
    ref = a.reference * 1e6 if a.reference else REFERENCE_PARAMS.get(a.preset or "")
    if ref:
        out["reference_m"] = ref / 1e6
        out["deviation_pct"] = round(100.0 * (n - ref) / ref, 2)
    if a.json:
        print(json.dumps(out, sort_keys=True))
    else:
        line = f"{n} parameters ({n / 1e6:.2f}M)"
        if ref:
            line += f"; reference {ref / 1e6:.2f}M, deviation {out['deviation_pct']:+.2f}%"
        print(line)
    return EXIT_OK


def cmd_bench(a) -> int:
    from .attention import AttentionConfig, dense_attention, dina_attend
    from .tensor import Tensor
    try:
        H, W = (int(v) for v in a.size.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--size must look like 64x64, got {a.size!r}")
    delta = 1 if a.op == "na" else a.dilation
    cfg = AttentionConfig(channels=a.channels, heads=a.heads, k=a.k, dilation=delta)
    _echo("bench", {"op": a.op, "H": H, "W": W, "k": a.k, "dilation": delta, "iters": a.iters,
                    "channels": a.channels, "heads": a.heads})
    rng = np.random.default_rng(0)
    shape = (1, a.heads, H, W, cfg.head_dim)
    q, k, v = (rng.standard_normal(shape).astype(np.float32) for _ in range(3))
    if a.op == "dense":
        def run():
            dense_attention(q, k, v)
    else:
        tq, tk, tv = Tensor(q), Tensor(k), Tensor(v)

        def run():
            dina_attend(tq, tk, tv, None, cfg)
    for _ in range(10):
        run()
    times = []
    for _ in range(a.iters):
        t0 = time.perf_counter()
        run()
        times.append(time.perf_counter() - t0)
    times = np.array(times)
    nbytes = 4 * q.nbytes
    print(f"{a.op}: mean {times.mean() * 1e3:.3f} ms, median {np.median(times) * 1e3:.3f} ms, "
          f"effective {nbytes / np.median(times) / 1e9:.3f} GB/s")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dinatir", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=int(os.environ.get("DINATIR_THREADS", "0")) or None,
                   help="BLAS thread count (default: $DINATIR_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write synthetic clean/degraded PNG pairs")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=4)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--blur", default="gaussian:1.5", help="gaussian:SIGMA or motion:LEN,ANGLE")
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a manifest directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path; the CSV log goes beside it")
    t.add_argument("--config")
    t.add_argument("--preset", choices=PRESETS)
    t.add_argument("--eval-data")
    t.add_argument("--iters", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--patch", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--loss", choices=("psnr", "l1"))
    t.add_argument("--eval-every", type=int)
    t.add_argument("--no-augment", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="mean PSNR/SSIM of a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="restore one PNG")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)
    i.set_defaults(func=cmd_infer)

    gc = sub.add_parser("grad-check", help="finite-difference gradient suites")
    gc.add_argument("--target", choices=("ops", "attention", "block", "model", "all"), default="all")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_grad_check)

    oc = sub.add_parser("oracle-check", help="kernels vs brute-force oracles")
    oc.add_argument("--seed", type=int, default=0)
    oc.set_defaults(func=cmd_oracle_check)

    pc = sub.add_parser("param-count", help="exact parameter count of a configuration")
    pc.add_argument("--config")
    pc.add_argument("--preset", choices=PRESETS)
    pc.add_argument("--reference", type=float, help="reference size in millions to compare against")
    pc.add_argument("--json", action="store_true")
    pc.set_defaults(func=cmd_param_count)

    b = sub.add_parser("bench", help="time an attention kernel")
    b.add_argument("--op", choices=("na", "dina", "dense"), default="dina")
    b.add_argument("--size", default="64x64")
    b.add_argument("--k", type=int, default=7)
    b.add_argument("--dilation", type=int, default=4)
    b.add_argument("--iters", type=int, default=20)
    b.add_argument("--channels", type=int, default=32)
    b.add_argument("--heads", type=int, default=2)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _apply_threads(a.threads)
    try:
        return a.func(a)
    except (DataError, FormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, GeometryError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
