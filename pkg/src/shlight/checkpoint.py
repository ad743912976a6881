"""Versioned binary checkpoint.

Layout (little-endian)::

    b"SHL1" | u32 version | u32 config_len | config JSON | 32-byte sha256(config)
    u32 n_tensors | tensor*
    u8 has_optimizer | [u64 step | f64 lr, beta1, beta2, eps | u32 n | (name, m tensor, v tensor)*]

    tensor := u16 name_len | name | u8 ndim | u32 dim * ndim | f32 data | u32 crc32(data)
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError
from .optim import AdamState

MAGIC = b"SHL1"
VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    tensors: dict[str, np.ndarray]
    optimizer: AdamState | None = None
    meta: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return config_digest(self.config)


def config_digest(config: dict) -> str:
    return hashlib.sha256(_canonical(config)).hexdigest()


def _canonical(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode()


def _write_tensor(out: list[bytes], name: str, arr: np.ndarray) -> None:
    raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    nb = name.encode()
    out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
    out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    out.append(raw)
    out.append(struct.pack("<I", zlib.crc32(raw)))


def dumps(ckpt: Checkpoint) -> bytes:
    cfg = _canonical({"config": ckpt.config, "meta": ckpt.meta})
    out = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, hashlib.sha256(cfg).digest()]
    out.append(struct.pack("<I", len(ckpt.tensors)))
    for name in sorted(ckpt.tensors):
        _write_tensor(out, name, ckpt.tensors[name])
    opt = ckpt.optimizer
    if opt is None:
        out.append(b"\x00")
    else:
        out.append(b"\x01" + struct.pack("<Q4d", opt.step, opt.lr, opt.beta1, opt.beta2, opt.eps))
        names = sorted(opt.m)
        out.append(struct.pack("<I", len(names)))
        for name in names:
            _write_tensor(out, name + "/m", opt.m[name])
            _write_tensor(out, name + "/v", opt.v[name])
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError("truncated checkpoint", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self) -> tuple[str, np.ndarray]:
        (nlen,) = self.unpack("<H")
        name = self.take(nlen).decode()
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}I")
        start = self.pos
        raw = self.take(4 * int(np.prod(shape, dtype=np.int64)))
        (crc,) = self.unpack("<I")
        if zlib.crc32(raw) != crc:
            raise ParseError(f"checksum mismatch in tensor {name!r}", start)
        return name, np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def loads(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ParseError("not a checkpoint (bad magic)", 0)
    version, clen = r.unpack("<II")
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", 4)
    cfg = r.take(clen)
    if hashlib.sha256(cfg).digest() != r.take(32):
        raise ParseError("config digest mismatch", 12)
    head = json.loads(cfg)
    (n,) = r.unpack("<I")
    tensors = dict(r.tensor() for _ in range(n))
    opt = None
    if r.take(1) == b"\x01":
        step, lr, b1, b2, eps = r.unpack("<Q4d")
        opt = AdamState(lr, b1, b2, eps, step)
        (k,) = r.unpack("<I")
        for _ in range(k):
            mname, m = r.tensor()
            vname, v = r.tensor()
            opt.m[mname[:-2]] = m
            opt.v[vname[:-2]] = v
    return Checkpoint(head["config"], tensors, opt, head.get("meta", {}))


def save(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load(path: str | Path) -> Checkpoint:
    return loads(Path(path).read_bytes())
