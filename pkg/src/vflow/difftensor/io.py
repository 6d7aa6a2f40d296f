"""Binary parameter checkpoints.

Layout: the magic ``VFPAR1`` followed by one record per parameter:
uint32 name length, UTF-8 name, uint32 rank, rank x uint64 dims, then the
values as little-endian float64 in row-major order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError

MAGIC = b"VFPAR1"


def encode_params(params) -> bytes:
    chunks = [MAGIC]
    for p in params:
        name = p.name.encode("utf-8")
        data = np.asarray(p.data, dtype="<f8")
        chunks.append(struct.pack("<I", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        chunks.append(data.tobytes())
    return b"".join(chunks)


def decode_params(blob: bytes) -> dict[str, np.ndarray]:
    if not blob.startswith(MAGIC):
        raise ConfigError("not a VFPAR1 checkpoint")
    pos = len(MAGIC)
    out = {}
    while pos < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", blob, pos)
        pos += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
        pos += 8 * count
        out[name] = values.reshape(dims).astype(np.float64)
    return out


def save_params(path, params):
    Path(path).write_bytes(encode_params(params))


def load_params(path, params):
    """Overwrite ``params`` in place from a checkpoint, matching by name."""
    stored = decode_params(Path(path).read_bytes())
    for p in params:
        if p.name not in stored:
            raise ConfigError(f"checkpoint has no parameter {p.name!r}")
        value = stored[p.name]
        if value.shape != p.shape:
            raise ConfigError(f"shape mismatch for {p.name!r}: {value.shape} vs {p.shape}")
        p.data[...] = value
