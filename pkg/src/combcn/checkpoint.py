"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"COMBCNCK"          magic
    u32                  format version
    u32 + bytes          variant tag
    u32 + bytes          JSON blob: {"config": ..., "iter": ..., "meta": ...}
    u32                  tensor count
    per tensor:
      u16 + bytes        name
      u8                 dtype code
      u8                 ndim
      u32 * ndim         shape
      bytes              data
    u32                  CRC32 of everything above
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import TrainConfig
from .errors import ChecksumError, VersionError
from .model import ModelBundle
from .net3d import Variant

MAGIC = b"COMBCNCK"
FORMAT_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODES = {np.dtype(v).newbyteorder("="): k for k, v in _DTYPES.items()}


def _encode_tensor(name: str, t: torch.Tensor) -> bytes:
    arr = t.detach().cpu().numpy()
    code = _CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
    raw_name = name.encode()
    head = struct.pack("<H", len(raw_name)) + raw_name
    head += struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def _blob(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def save_checkpoint(bundle: ModelBundle, cfg: TrainConfig, iteration: int, path,
                    meta: Optional[dict] = None, extra: Optional[dict] = None) -> None:
    """Write model tensors (plus optional ``extra`` tensors) atomically."""
    doc = {
        "config": cfg.to_dict(),
        "iter": int(iteration),
        "meta": meta or {},
        "bundle": {
            "reduced": bundle.reduced,
            "fusion": bundle.fusion,
            "mean_pixel": list(bundle.mean_pixel),
        },
    }
    tensors = dict(bundle.tensors())
    for k, v in (extra or {}).items():
        tensors[f"extra/{k}"] = v
    parts = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        _blob(bundle.variant.value.encode()),
        _blob(json.dumps(doc, sort_keys=True).encode()),
        struct.pack("<I", len(tensors)),
    ]
    parts += [_encode_tensor(n, tensors[n]) for n in sorted(tensors)]
    body = b"".join(parts)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ChecksumError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)


def read_checkpoint(path) -> dict:
    """Parse and verify a checkpoint; returns the raw document and tensors."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[:len(MAGIC)] != MAGIC:
        raise ChecksumError(f"{path}: not a checkpoint file")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError(f"{path}: CRC mismatch")
    rd = _Reader(body)
    rd.take(len(MAGIC))
    (version,) = rd.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    variant = rd.blob().decode()
    doc = json.loads(rd.blob())
    (count,) = rd.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = rd.unpack("<H")
        name = rd.take(name_len).decode()
        code, ndim = rd.unpack("<BB")
        shape = rd.unpack(f"<{ndim}I")
        dt = _DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(rd.take(n * dt.itemsize), dtype=dt).reshape(shape)
        tensors[name] = torch.from_numpy(arr.astype(dt.newbyteorder("="), copy=True))
    if rd.pos != len(body):
        raise ChecksumError(f"{path}: trailing bytes after tensor records")
    doc["variant"] = variant
    doc["tensors"] = tensors
    return doc


def load_checkpoint(path, expect_variant: Optional[Variant] = None):
    """Load ``(bundle, cfg, iter)``; rejects a variant other than ``expect_variant``."""
    doc = read_checkpoint(path)
    variant = Variant(doc["variant"])
    if expect_variant is not None and variant is not Variant(expect_variant):
        raise VersionError(
            f"{path}: checkpoint variant {variant.value}, expected {Variant(expect_variant).value}"
        )
    info = doc["bundle"]
    model = {k: v for k, v in doc["tensors"].items() if not k.startswith("extra/")}
    bundle = ModelBundle(variant, info["reduced"], {}, {}, info["fusion"],
                         tuple(info["mean_pixel"]))
    bundle.load_tensors(model)
    cfg = TrainConfig.from_dict(doc["config"])
    return bundle, cfg, doc["iter"]
