"""Versioned binary checkpoint container.

Layout (little-endian)::

    magic      8 bytes   b"MMBTCKPT"
    version    u32
    header     u64 length + UTF-8 JSON (model kind, config, vocab, classes, ...)
    count      u32
    count x    u32 name length, UTF-8 name, u32 ndim, ndim x u64 extents,
               row-major float64 payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigMismatch, ParseError

MAGIC = b"MMBTCKPT"
VERSION = 1


def save_checkpoint(path, state: dict[str, np.ndarray], header: dict) -> None:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(head)), head, struct.pack("<I", len(state))]
    for name in sorted(state):
        arr = np.asarray(state[name], dtype="<f8", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ParseError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise ParseError("not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ConfigMismatch(f"unsupported checkpoint version {version}")
    (hlen,) = r.unpack("<Q")
    header = json.loads(r.take(hlen).decode("utf-8"))
    (count,) = r.unpack("<I")
    state = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        state[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    return state, header
