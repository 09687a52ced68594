"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes   b"HTENCKPT"
    version    uint32    currently 1
    meta_len   uint32
    meta       meta_len bytes of UTF-8 JSON, keys sorted:
               {"config": <ModelConfig fields>, "vocab": [...], "act_labels": [...],
                "step": <optimizer step>, ...extra}
    count      uint32    number of parameters
    count x:
        name_len  uint16, name (UTF-8)
        ndim      uint8,  dims uint32 x ndim
        values    float64 x prod(dims), row-major

Values are always stored as 64-bit floats; float32 models are widened on save.
"""

from __future__ import annotations

import json
import struct
from typing import Optional, Tuple

import numpy as np

from .config import ModelConfig
from .errors import CompatibilityError
from .models import DialogModel
from .nn import ParameterStore

MAGIC = b"HTENCKPT"
VERSION = 1


def save_checkpoint(path, model: DialogModel, vocab=None, act_labels=None, extra: Optional[dict] = None) -> None:
    meta = {
        "config": model.cfg.to_dict(),
        "vocab": None if vocab is None else list(vocab.itos),
        "act_labels": None if act_labels is None else list(act_labels),
        "step": model.store.step,
    }
    meta.update(extra or {})
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(model.store)))
        for name, p in model.store.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def _read(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CompatibilityError("truncated checkpoint")
    return data


def load_checkpoint(path) -> Tuple[DialogModel, dict]:
    with open(path, "rb") as fh:
        if _read(fh, 8) != MAGIC:
            raise CompatibilityError(f"{path} is not a checkpoint")
        version, meta_len = struct.unpack("<II", _read(fh, 8))
        if version != VERSION:
            raise CompatibilityError(f"unsupported checkpoint version {version}")
        meta = json.loads(_read(fh, meta_len).decode("utf-8"))
        cfg = ModelConfig.from_dict(meta["config"])
        store = ParameterStore(np.dtype(cfg.dtype))
        (count,) = struct.unpack("<I", _read(fh, 4))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read(fh, 2))
            name = _read(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read(fh, 1))
            shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            values = np.frombuffer(_read(fh, 8 * n), dtype="<f8").reshape(shape)
            store.add(name, values.astype(cfg.dtype, copy=True))
        if fh.read(1):
            raise CompatibilityError("trailing bytes after last parameter")
    store.step = int(meta.get("step", 0))
    expected = DialogModel(cfg, seed=0).store
    if {n: p.shape for n, p in expected.items()} != {n: p.shape for n, p in store.items()}:
        raise CompatibilityError("checkpoint parameters do not match its model config")
    return DialogModel(cfg, store=store), meta
