"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"EPCKPT01"  u32 version  u32 n_sections
    repeated:    u16 name_len  name  u8 kind  u64 payload_len  payload

Section kinds: 0 = UTF-8 ``key=value`` lines, 1 = float64 tensor
(``u32 ndim, u64 dims..., data``), 2 = int64 vector (``u64 n, data``).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

MAGIC = b"EPCKPT01"
VERSION = 1
KIND_TEXT, KIND_TENSOR, KIND_INTS = 0, 1, 2


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class CheckpointRecord:
    config: Dict[str, str] = field(default_factory=dict)
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    ints: Dict[str, np.ndarray] = field(default_factory=dict)


def canonical_text(cfg: Dict[str, str]) -> str:
    return "".join(f"{k}={cfg[k]}\n" for k in sorted(cfg))


def parse_text(text: str) -> Dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line:
            k, _, v = line.partition("=")
            out[k] = v
    return out


def _section(name: str, kind: int, payload: bytes) -> bytes:
    raw = name.encode()
    return struct.pack("<H", len(raw)) + raw + struct.pack("<BQ", kind, len(payload)) + payload


def encode(record: CheckpointRecord) -> bytes:
    parts = [_section("config", KIND_TEXT, canonical_text(record.config).encode())]
    for name in sorted(record.tensors):
        a = np.array(record.tensors[name], dtype="<f8", order="C")
        head = struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
        parts.append(_section(name, KIND_TENSOR, head + a.tobytes()))
    for name in sorted(record.ints):
        a = np.ascontiguousarray(record.ints[name], dtype="<i8").reshape(-1)
        parts.append(_section(name, KIND_INTS, struct.pack("<Q", a.size) + a.tobytes()))
    return MAGIC + struct.pack("<II", VERSION, len(parts)) + b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes) -> CheckpointRecord:
    r = _Reader(buf)
    if len(buf) < len(MAGIC) or r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not an EdgeProp checkpoint (bad magic)")
    version, n = r.unpack("<II")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {VERSION}")
    rec = CheckpointRecord()
    for _ in range(n):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        kind, plen = r.unpack("<BQ")
        sub = _Reader(r.take(plen))
        if kind == KIND_TEXT:
            rec.config = parse_text(sub.buf.decode())
        elif kind == KIND_TENSOR:
            (ndim,) = sub.unpack("<I")
            shape = sub.unpack(f"<{ndim}Q")
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(sub.take(8 * count), dtype="<f8").astype(np.float64)
            rec.tensors[name] = data.reshape(shape)
        elif kind == KIND_INTS:
            (count,) = sub.unpack("<Q")
            rec.ints[name] = np.frombuffer(sub.take(8 * count), dtype="<i8").astype(np.int64)
        else:
            raise CheckpointError(f"unknown section kind {kind} in {name!r}")
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after last section")
    return rec


def save_checkpoint(record: CheckpointRecord, path) -> None:
    Path(path).write_bytes(encode(record))


def load_checkpoint(path) -> CheckpointRecord:
    return decode(Path(path).read_bytes())
