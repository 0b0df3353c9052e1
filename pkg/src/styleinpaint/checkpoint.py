"""Binary checkpoint container shared by the style and diffusion trainers.

Layout (little-endian): 8-byte magic, u32 JSON length + UTF-8 config echo
with sorted keys, u32 tensor count, then per tensor: u16 path length + UTF-8
path, u8 ndim, u32 per dim, float32 data. Tensors are written in sorted path
order so identical state always produces identical bytes. Optimizer moments
ride along under an "opt." path prefix, which makes resume exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError

PSRL_MAGIC = b"PSRL0001"
NSDM_MAGIC = b"NSDM0001"


def save_checkpoint(path, magic: bytes, config: dict, tensors: dict) -> None:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path, magic: bytes) -> tuple[dict, dict]:
    with open(path, "rb") as f:
        got = f.read(len(magic))
        if got != magic:
            if got[:4] == magic[:4]:
                raise DataError(f"checkpoint version mismatch: got {got!r}, expected {magic!r}")
            raise DataError(f"malformed checkpoint header: expected magic {magic!r}")

        def take(n):
            buf = f.read(n)
            if len(buf) != n:
                raise DataError("truncated checkpoint")
            return buf

        (jlen,) = struct.unpack("<I", take(4))
        config = json.loads(take(jlen).decode("utf-8"))
        (count,) = struct.unpack("<I", take(4))
        tensors = {}
        for _ in range(count):
            (plen,) = struct.unpack("<H", take(2))
            name = take(plen).decode("utf-8")
            (ndim,) = struct.unpack("<B", take(1))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape)
            tensors[name] = data.copy()
    return config, tensors
