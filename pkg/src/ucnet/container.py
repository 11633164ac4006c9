"""Binary tensor container shared by checkpoints and preprocessed tensors.

Layout (all integers little-endian)::

    b"UCNT"  u16 version
    u32 config length, UTF-8 ``key=value`` lines
    u32 tensor count
    per tensor: u16 name length, name (UTF-8), u8 ndim, ndim x u32 dims, float32 values
    u64 FNV-1a digest of every preceding byte
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DigestMismatch

MAGIC = b"UCNT"
VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def encode_config(config: dict) -> bytes:
    lines = []
    for key, value in config.items():
        if "=" in key or "\n" in key or "\n" in str(value):
            raise CheckpointError(f"config entry {key!r} cannot be serialized")
        lines.append(f"{key}={value}")
    return "\n".join(lines).encode("utf-8")


def decode_config(block: bytes) -> dict[str, str]:
    out = {}
    for line in block.decode("utf-8").splitlines():
        if not line:
            continue
        if "=" not in line:
            raise CheckpointError(f"malformed config line {line!r}")
        key, value = line.split("=", 1)
        out[key] = value
    return out


def dumps(config: dict, tensors: dict[str, np.ndarray]) -> bytes:
    cfg = encode_config(config)
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(cfg)), cfg,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def loads(data: bytes) -> tuple[dict[str, str], "OrderedDict[str, np.ndarray]"]:
    if len(data) < 6 or data[:4] != MAGIC:
        raise CheckpointError("bad magic: not a UCNT container")
    (version,) = struct.unpack("<H", data[4:6])
    if version != VERSION:
        raise CheckpointError(f"unsupported container version {version} (expected {VERSION})")
    if len(data) < 18:
        raise CheckpointError("container truncated")
    body, (digest,) = data[:-8], struct.unpack("<Q", data[-8:])
    if fnv1a64(body) != digest:
        raise DigestMismatch("digest mismatch: container is corrupted")
    try:
        pos = 6
        (clen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        config = decode_config(body[pos:pos + clen])
        pos += clen
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        tensors = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(body):
                raise CheckpointError(f"tensor {name!r} truncated")
            tensors[name] = np.frombuffer(body, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed container: {exc}") from None
    if pos != len(body):
        raise CheckpointError("trailing bytes after last tensor")
    return config, tensors


def save(path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(config, tensors))


def load(path):
    return loads(Path(path).read_bytes())
