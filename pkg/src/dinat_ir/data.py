"""Image I/O, synthetic degradations, patch sampling and dataset manifests."""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataError, FormatError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass
class ImagePair:
    clean: np.ndarray      # (3, H, W) float32 in [0, 1]
    degraded: np.ndarray   # (3, H, W), or (6, H, W) for two degraded views
    id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.clean.shape[1:] != self.degraded.shape[1:]:
            raise DataError(f"pair {self.id!r}: clean {self.clean.shape} vs degraded {self.degraded.shape}")


# ---------------------------------------------------------------- I/O

def load_image(path) -> np.ndarray:
    """8-bit RGB PNG -> float32 (3, H, W) via v / 255."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(8) != PNG_SIGNATURE:
            raise FormatError(f"{path} is not a PNG file")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return (arr.astype(np.float32) / np.float32(255.0)).transpose(2, 0, 1).copy()


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise FormatError(f"expected a (3, H, W) image, got {img.shape}")
    Image.fromarray(np.ascontiguousarray(to_uint8(img).transpose(1, 2, 0))).save(Path(path), format="PNG")


# ---------------------------------------------------------------- degradation

@dataclass(frozen=True)
class DegradationSpec:
    blur: str = "gaussian"      # "gaussian" or "motion"
    sigma: float = 1.5          # gaussian std (pixels)
    length: int = 9             # motion kernel length
    angle: float = 0.0          # motion angle in degrees
    noise_sigma: float = 0.0
    seed: int = 0

    @classmethod
    def parse(cls, blur: str, noise: float = 0.0, seed: int = 0) -> "DegradationSpec":
        """``gaussian:SIGMA`` or ``motion:LEN,ANGLE``."""
        kind, _, arg = blur.partition(":")
        try:
            if kind == "gaussian":
                return cls("gaussian", sigma=float(arg), noise_sigma=noise, seed=seed)
            if kind == "motion":
                length, angle = arg.split(",")
                return cls("motion", length=int(length), angle=float(angle), noise_sigma=noise, seed=seed)
        except ValueError:
            pass
        raise ValueError(f"bad blur spec {blur!r}; use gaussian:SIGMA or motion:LEN,ANGLE")


def blur_kernel(spec: DegradationSpec) -> np.ndarray:
    """Normalized 2-D blur kernel (sums to 1)."""
    if spec.blur == "gaussian":
        if spec.sigma <= 1e-6:
            return np.ones((1, 1))
        r = int(math.ceil(3 * spec.sigma))
        x = np.arange(-r, r + 1)
        g = np.exp(-(x ** 2) / (2 * spec.sigma ** 2))
        k = np.outer(g, g)
    elif spec.blur == "motion":
        n = max(1, spec.length)
        size = n if n % 2 else n + 1
        k = np.zeros((size, size))
        c = (size - 1) / 2
        theta = math.radians(spec.angle)
        # supersample the segment so every angle yields a connected streak
        for t in np.linspace(-(n - 1) / 2, (n - 1) / 2, 4 * n):
            y = int(round(c - t * math.sin(theta)))
            x = int(round(c + t * math.cos(theta)))
            k[y, x] += 1.0
    else:
        raise ValueError(f"unknown blur kind {spec.blur!r}")
    return k / k.sum()


def item_seed(seed: int, item_id: str) -> int:
    return seed ^ zlib.crc32(item_id.encode())


def synth_degrade(clean: np.ndarray, spec: DegradationSpec, item_id: str = "") -> ImagePair:
    """Blur with reflection padding, add seeded Gaussian noise, clamp to [0, 1]."""
    clean = np.asarray(clean, dtype=np.float32)
    k = blur_kernel(spec)
    out = np.stack([ndimage.correlate(ch.astype(np.float64), k, mode="reflect") for ch in clean])
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(item_seed(spec.seed, item_id))
        out = out + rng.normal(0.0, spec.noise_sigma, size=out.shape)
    out = np.clip(out, 0.0, 1.0).astype(np.float32)
    return ImagePair(clean, out, item_id, {"degradation": spec.__dict__.copy()})


def procedural_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded clean image: a color gradient, filled shapes and glyph-like strokes."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    c0, c1, c2 = rng.uniform(0.1, 0.9, size=(3, 3))
    img = c0[:, None, None] + (c1 - c0)[:, None, None] * xx + (c2 - c0)[:, None, None] * yy * 0.5
    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0, 1, size=3)[:, None, None]
        cy, cx = rng.uniform(0, size, size=2)
        r = rng.uniform(size / 12, size / 4)
        if rng.random() < 0.5:
            mask = (yy * size - cy) ** 2 + (xx * size - cx) ** 2 < r * r
        else:
            mask = (np.abs(yy * size - cy) < r) & (np.abs(xx * size - cx) < r * rng.uniform(0.3, 1.0))
        img = np.where(mask[None], color, img)
    # glyphs: short thick strokes in a dark or light ink
    for _ in range(rng.integers(4, 10)):
        ink = rng.choice([0.05, 0.95])
        y0, x0 = rng.integers(0, size, size=2)
        horizontal = rng.random() < 0.5
        L = int(rng.integers(size // 16 + 2, size // 5 + 3))
        w = int(rng.integers(1, 3))
        if horizontal:
            img[:, y0:y0 + w, x0:x0 + L] = ink
        else:
            img[:, y0:y0 + L, x0:x0 + w] = ink
    return np.clip(img, 0, 1).astype(np.float32)


# ---------------------------------------------------------------- sampling

def sample_patch(pair: ImagePair, size: int, rng: np.random.Generator) -> ImagePair:
    H, W = pair.clean.shape[1:]
    if size > H or size > W:
        raise DataError(f"patch {size} larger than image {H}x{W}")
    y = int(rng.integers(0, H - size + 1))
    x = int(rng.integers(0, W - size + 1))
    sl = (slice(None), slice(y, y + size), slice(x, x + size))
    return ImagePair(pair.clean[sl], pair.degraded[sl], pair.id, {"crop": (y, x)})


def augment(pair: ImagePair, rng: np.random.Generator) -> ImagePair:
    """Horizontal flip, vertical flip and 90-degree rotation, each with p=0.5, applied to both images."""
    ops = rng.random(3) < 0.5
    out = []
    for img in (pair.clean, pair.degraded):
        if ops[0]:
            img = img[:, :, ::-1]
        if ops[1]:
            img = img[:, ::-1, :]
        if ops[2]:
            img = np.rot90(img, 1, axes=(1, 2))
        out.append(np.ascontiguousarray(img))
    return ImagePair(out[0], out[1], pair.id, dict(pair.meta, aug=ops.tolist()))


# ---------------------------------------------------------------- manifest

MANIFEST = "manifest.json"


def manifest(directory) -> list[dict]:
    """Validated entries of ``<dir>/manifest.json`` with absolute paths."""
    directory = Path(directory)
    mpath = directory / MANIFEST
    if not mpath.is_file():
        raise DataError(f"no {MANIFEST} in {directory}")
    try:
        entries = json.loads(mpath.read_text())["pairs"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"malformed {mpath}: {e}") from e
    if not entries:
        raise DataError(f"{mpath} lists no pairs")
    out = []
    for e in entries:
        clean = directory / e["clean"]
        degraded = [directory / d for d in (e["degraded"] if isinstance(e["degraded"], list) else [e["degraded"]])]
        for p in [clean, *degraded]:
            if not p.is_file():
                raise DataError(f"pair {e['id']!r}: missing file {p}")
        sizes = set()
        for p in [clean, *degraded]:
            with Image.open(p) as im:
                sizes.add(im.size)
        if len(sizes) != 1:
            raise DataError(f"pair {e['id']!r}: image sizes differ {sorted(sizes)}")
        out.append({"id": e["id"], "clean": clean, "degraded": degraded})
    return out


def load_pairs(directory) -> list[ImagePair]:
    pairs = []
    for e in manifest(directory):
        degraded = np.concatenate([load_image(p) for p in e["degraded"]], axis=0)
        pairs.append(ImagePair(load_image(e["clean"]), degraded, e["id"]))
    return pairs


def generate_dataset(out_dir, count: int, size: int, spec: DegradationSpec) -> list[dict]:
    """Write ``count`` procedural clean/degraded PNG pairs plus a manifest."""
    if size % 8:
        raise ValueError(f"image size {size} must be divisible by 8")
    if count < 1:
        raise ValueError("count must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        item_id = f"{i:04d}"
        rng = np.random.default_rng(item_seed(spec.seed, "clean" + item_id))
        clean = procedural_image(size, rng)
        # quantize first so the stored clean image is exactly what was degraded
        clean = to_uint8(clean).astype(np.float32) / np.float32(255.0)
        pair = synth_degrade(clean, spec, item_id)
        save_image(pair.clean, out_dir / f"{item_id}_clean.png")
        save_image(pair.degraded, out_dir / f"{item_id}_degraded.png")
        entries.append({"id": item_id, "clean": f"{item_id}_clean.png", "degraded": f"{item_id}_degraded.png"})
    (out_dir / MANIFEST).write_text(json.dumps({"pairs": entries}, indent=2) + "\n")
    return entries
