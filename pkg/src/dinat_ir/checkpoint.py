"""Binary checkpoint format.

Layout::

    b"DINATIR1" | u64 little-endian header length | JSON header | payload

The header holds the model config, the iteration, the RNG seed and a manifest
of ``{name, dtype, shape, offset, nbytes}`` per parameter; offsets are relative
to the start of the payload, which is the concatenation of little-endian f32
buffers in manifest order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import DiNATIR, ModelConfig, build_model

MAGIC = b"DINATIR1"
_LEN = struct.Struct("<Q")


def save_checkpoint(model: DiNATIR, path, iteration: int = 0, seed: int = 0, extra: dict | None = None) -> None:
    manifest, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        buf = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        manifest.append({"name": name, "dtype": "f32", "shape": list(p.shape),
                         "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    header = {"config": model.cfg.to_dict(), "iteration": iteration, "seed": seed,
              "tensors": manifest}
    if extra:
        header["extra"] = extra
    hbytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(hbytes)))
        fh.write(hbytes)
        for c in chunks:
            fh.write(c)
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse and validate a checkpoint into (header, name -> float32 array)."""
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    pos = len(MAGIC)
    if len(raw) < pos + _LEN.size:
        raise FormatError(f"{path}: truncated header length")
    (hlen,) = _LEN.unpack_from(raw, pos)
    pos += _LEN.size
    if len(raw) < pos + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[pos:pos + hlen])
        tensors = header["tensors"]
    except (ValueError, KeyError) as e:
        raise FormatError(f"{path}: unreadable header ({e})") from e
    payload = memoryview(raw)[pos + hlen:]

    expected = 0
    state = {}
    for t in sorted(tensors, key=lambda t: t["offset"]):
        n = int(np.prod(t["shape"], dtype=np.int64)) * 4
        if t.get("dtype") != "f32" or t["nbytes"] != n:
            raise FormatError(f"{path}: bad manifest entry for {t['name']}")
        if t["offset"] != expected:
            raise FormatError(f"{path}: manifest overlap or gap at {t['name']}")
        if t["offset"] + n > len(payload):
            raise FormatError(f"{path}: truncated payload at {t['name']}")
        arr = np.frombuffer(payload[t["offset"]:t["offset"] + n], dtype="<f4")
        state[t["name"]] = arr.reshape(t["shape"]).astype(np.float32)
        expected += n
    if expected != len(payload):
        raise FormatError(f"{path}: {len(payload) - expected} trailing payload bytes")
    if len(state) != len(tensors):
        raise FormatError(f"{path}: duplicate tensor names")
    return header, state


def load_checkpoint(path, dtype=np.float32) -> tuple[DiNATIR, dict]:
    header, state = read_checkpoint(path)
    try:
        cfg = ModelConfig.from_dict(header["config"])
    except Exception as e:
        raise FormatError(f"{path}: invalid model config ({e})") from e
    model = build_model(cfg, seed=header.get("seed", 0), dtype=np.float32)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: parameters do not match the stored config ({e})") from e
    if dtype != np.float32:
        model.to(dtype)
    return model, header
