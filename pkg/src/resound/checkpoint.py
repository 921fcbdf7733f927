"""Bit-exact named-tensor checkpoint files.

Layout (all little-endian): magic "GSPR", version u32, tensor count u32;
per tensor: name length u16, UTF-8 name, rank u8, one u32 per dim, raw
float32 data. Used for generator, discriminator and enhancement weights
as well as optimizer state.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"GSPR"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name!r}")
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<I", d)
        blob += arr.tobytes()
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (count,) = struct.unpack_from("<I", raw, 8)
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + nlen].decode("utf-8")
            pos += nlen
            rank = raw[pos]
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", raw, pos) if rank else ()
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(dims)
            pos += 4 * n
            out[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from e
    if pos != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after tensor data")
    return out
