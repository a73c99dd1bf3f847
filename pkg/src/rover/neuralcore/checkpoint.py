"""Versioned little-endian checkpoint files.

Layout::

    magic      8 bytes   b"RVRCKPT\\0"
    version    u32
    spec_len   u32, then spec_len bytes of UTF-8 NetSpec JSON
    count      u64       number of f64 values (parameters then buffers)
    values     count * f64
    meta_len   u32, then meta_len bytes of UTF-8 JSON metadata
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import CheckpointCountError, CheckpointHeaderError, CheckpointVersionError
from .network import NetSpec, network

MAGIC = b"RVRCKPT\0"
VERSION = 1


@dataclass
class Checkpoint:
    spec: NetSpec
    params: np.ndarray
    buffers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    metadata: dict = field(default_factory=dict)
    version: int = VERSION

    def __post_init__(self):
        net = network(self.spec)
        self.params = np.asarray(self.params, dtype=np.float64)
        self.buffers = np.asarray(self.buffers, dtype=np.float64)
        if self.buffers.size == 0 and net.n_buffers:
            self.buffers = net.default_buffers()
        if self.params.size != net.n_params or self.buffers.size != net.n_buffers:
            raise CheckpointCountError(
                f"spec needs {net.n_params} parameters + {net.n_buffers} buffers, "
                f"got {self.params.size} + {self.buffers.size}")

    @property
    def net(self):
        return network(self.spec)

    def digest(self) -> str:
        h = hashlib.sha256(self.spec.to_text().encode())
        h.update(self.params.astype("<f8").tobytes())
        h.update(self.buffers.astype("<f8").tobytes())
        return h.hexdigest()


def to_bytes(ckpt: Checkpoint) -> bytes:
    spec = ckpt.spec.to_text().encode("utf-8")
    values = np.concatenate([ckpt.params, ckpt.buffers]).astype("<f8")
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode("utf-8")
    return b"".join([
        MAGIC, struct.pack("<I", ckpt.version), struct.pack("<I", len(spec)), spec,
        struct.pack("<Q", values.size), values.tobytes(), struct.pack("<I", len(meta)), meta,
    ])


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointHeaderError("not a checkpoint file (bad magic bytes)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", blob, pos)
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    pos += 4
    (spec_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if pos + spec_len + 8 > len(blob):
        raise CheckpointHeaderError("truncated checkpoint header")
    try:
        spec = NetSpec.from_text(blob[pos:pos + spec_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise CheckpointHeaderError(f"corrupt network description: {exc}") from None
    pos += spec_len
    (count,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    net = network(spec)
    if count != net.n_params + net.n_buffers:
        raise CheckpointCountError(f"file declares {count} values, spec needs {net.n_params + net.n_buffers}")
    if pos + 8 * count > len(blob):
        raise CheckpointCountError(f"file holds {(len(blob) - pos) // 8} values, header declares {count}")
    values = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64)
    pos += 8 * count
    meta = {}
    if pos + 4 <= len(blob):
        (meta_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + meta_len > len(blob):
            raise CheckpointHeaderError("truncated metadata block")
        meta = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
    else:
        raise CheckpointHeaderError("missing metadata block")
    return Checkpoint(spec, values[:net.n_params].copy(), values[net.n_params:].copy(), meta, version)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
