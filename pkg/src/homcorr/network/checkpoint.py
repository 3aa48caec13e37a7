"""Checkpoint files.

Layout (little-endian)::

    b"HCKP"  version u32  fingerprint u64
    spec_len u32  spec (canonical JSON, utf-8)
    n_params u64  n_buffers u64  epoch u32  adam_t u64
    params f8[n_params]  adam_m f8[n_params]  adam_v f8[n_params]  buffers f8[n_buffers]
    rng_len u32  rng state (JSON of the PCG64 state)
    crc32 u32 of everything above
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .model import Model, ModelSpec
from .optim import AdamState

MAGIC = b"HCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class FingerprintMismatch(CheckpointError):
    pass


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: np.ndarray
    buffers: np.ndarray
    adam: AdamState
    rng_state: dict
    epoch: int = 0

    @property
    def fingerprint(self) -> int:
        return self.spec.fingerprint()

    @classmethod
    def from_model(cls, model: Model, adam: AdamState | None = None, rng_state: dict | None = None,
                   epoch: int = 0) -> "Checkpoint":
        n = model.n_params
        return cls(model.spec, model.get_flat(), model.get_buffers(), adam or AdamState.zeros(n),
                   rng_state or np.random.default_rng(0).bit_generator.state, epoch)

    def build_model(self) -> Model:
        model = Model(self.spec)
        model.set_flat(self.params)
        model.set_buffers(self.buffers)
        return model


def to_bytes(ck: Checkpoint) -> bytes:
    spec = ck.spec.canonical().encode()
    rng = json.dumps(ck.rng_state, sort_keys=True).encode()
    n, nb = ck.params.size, ck.buffers.size
    parts = [
        struct.pack("<4sIQ", MAGIC, VERSION, ck.fingerprint),
        struct.pack("<I", len(spec)), spec,
        struct.pack("<QQIQ", n, nb, ck.epoch, ck.adam.t),
        np.ascontiguousarray(ck.params, "<f8").tobytes(),
        np.ascontiguousarray(ck.adam.m, "<f8").tobytes(),
        np.ascontiguousarray(ck.adam.v, "<f8").tobytes(),
        np.ascontiguousarray(ck.buffers, "<f8").tobytes(),
        struct.pack("<I", len(rng)), rng,
    ]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpoint("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(float)


def from_bytes(data: bytes, spec: ModelSpec | None = None) -> Checkpoint:
    r = _Reader(data)
    magic, version, fp = r.unpack("<4sIQ")
    if magic != MAGIC:
        raise CorruptCheckpoint(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if len(data) < 4 or zlib.crc32(data[:-4]) != struct.unpack("<I", data[-4:])[0]:
        raise CorruptCheckpoint("checksum mismatch (truncated or corrupted file)")
    (slen,) = r.unpack("<I")
    stored = ModelSpec.from_dict(json.loads(r.take(slen).decode()))
    if stored.fingerprint() != fp:
        raise CorruptCheckpoint("stored spec does not match its fingerprint")
    if spec is not None and spec.fingerprint() != fp:
        raise FingerprintMismatch(
            f"checkpoint fingerprint {fp:016x} does not match spec {spec.fingerprint():016x}")
    n, nb, epoch, t = r.unpack("<QQIQ")
    params, m, v, buffers = r.floats(n), r.floats(n), r.floats(n), r.floats(nb)
    (rlen,) = r.unpack("<I")
    rng_state = json.loads(r.take(rlen).decode())
    return Checkpoint(stored, params, buffers, AdamState(m, v, t), rng_state, epoch)


def save_checkpoint(path, ck: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ck))


def load_checkpoint(path, spec: ModelSpec | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), spec)
